#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fwgen/gateway.hpp"

namespace fwgen::metrics {

/// Reference-based scores, each in [0,1]. Reports multiply by 100.
struct MetricReport {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    double bleu = 0.0;
    double jaccard = 0.0;
    /// Absent when no embedding provider is available.
    std::optional<double> cosine;
};

// Token-level forms. All text forms tokenize with text::tokenize.

/// F1 of clipped n-gram overlap; 0 when either side has no n-grams.
double rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
/// F1 of LCS-based precision and recall.
double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
/// Sentence BLEU-4: geometric mean of modified precisions with add-one
/// smoothing on orders 2-4, times the brevity penalty exp(1 - r/c) when c < r.
double bleu(std::span<const std::string> candidate, std::span<const std::string> reference);
/// |A ∩ B| / |A ∪ B| over token sets; 1 when both are empty.
double jaccard(std::span<const std::string> candidate, std::span<const std::string> reference);

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n);
double rouge_l(std::string_view candidate, std::string_view reference);
double bleu(std::string_view candidate, std::string_view reference);
double jaccard(std::string_view candidate, std::string_view reference);

/// Cosine of the two embeddings, floored at 0.
double cosine_sim(std::string_view candidate, std::string_view reference, llm::Gateway& gateway,
                  const std::string& model);

/// Every metric from one tokenization. `gateway` may be null, leaving cosine unset.
MetricReport evaluate_all(std::string_view candidate, std::string_view reference, llm::Gateway* gateway,
                          const std::string& embedding_model);

/// "12.35" for 0.12345: value × 100, two decimals.
std::string format_percent(double unit_value);

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

}  // namespace fwgen::metrics
