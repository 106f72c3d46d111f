#include "fwgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "fwgen/errors.hpp"
#include "fwgen/retrieval.hpp"
#include "fwgen/text.hpp"

namespace fwgen::metrics {
namespace {

using Tokens = std::span<const std::string>;

std::map<std::vector<std::string>, std::size_t> ngram_counts(Tokens tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (tokens.size() < n) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

// Clipped matches and candidate n-gram total.
std::pair<std::size_t, std::size_t> clipped_overlap(Tokens candidate, Tokens reference, std::size_t n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand) {
        if (const auto it = ref.find(gram); it != ref.end()) {
            matches += std::min(count, it->second);
        }
    }
    const std::size_t total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
    return {matches, total};
}

double f1(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

std::size_t lcs_length(Tokens a, Tokens b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_n(Tokens candidate, Tokens reference, std::size_t n) {
    if (n < 1) {
        throw InvalidArgument("rouge_n: n must be >= 1");
    }
    if (candidate.size() < n || reference.size() < n) {
        return 0.0;
    }
    const auto [matches, cand_total] = clipped_overlap(candidate, reference, n);
    const double ref_total = static_cast<double>(reference.size() - n + 1);
    return f1(static_cast<double>(matches) / static_cast<double>(cand_total), static_cast<double>(matches) / ref_total);
}

double rouge_l(Tokens candidate, Tokens reference) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    return f1(lcs / static_cast<double>(candidate.size()), lcs / static_cast<double>(reference.size()));
}

double bleu(Tokens candidate, Tokens reference) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        auto [matches, total] = clipped_overlap(candidate, reference, n);
        double p = 0.0;
        if (n == 1) {
            p = static_cast<double>(matches) / static_cast<double>(total);
        } else {
            p = (static_cast<double>(matches) + 1.0) / (static_cast<double>(total) + 1.0);
        }
        if (p <= 0.0) {
            return 0.0;
        }
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
    return brevity * std::exp(log_sum / 4.0);
}

double jaccard(Tokens candidate, Tokens reference) {
    const std::set<std::string> a(candidate.begin(), candidate.end());
    const std::set<std::string> b(reference.begin(), reference.end());
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t inter = 0;
    for (const auto& t : a) {
        inter += b.count(t);
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
    return rouge_n(text::tokenize(candidate), text::tokenize(reference), n);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
    return rouge_l(text::tokenize(candidate), text::tokenize(reference));
}

double bleu(std::string_view candidate, std::string_view reference) {
    return bleu(text::tokenize(candidate), text::tokenize(reference));
}

double jaccard(std::string_view candidate, std::string_view reference) {
    return jaccard(text::tokenize(candidate), text::tokenize(reference));
}

double cosine_sim(std::string_view candidate, std::string_view reference, llm::Gateway& gateway,
                  const std::string& model) {
    const std::vector<std::string> texts{std::string(candidate), std::string(reference)};
    auto vectors = gateway.embed(texts, model);
    const auto a = retrieval::unit_normalize(std::move(vectors[0]));
    const auto b = retrieval::unit_normalize(std::move(vectors[1]));
    return std::clamp(retrieval::dot(a, b), 0.0, 1.0);
}

MetricReport evaluate_all(std::string_view candidate, std::string_view reference, llm::Gateway* gateway,
                          const std::string& embedding_model) {
    const auto cand = text::tokenize(candidate);
    const auto ref = text::tokenize(reference);
    MetricReport report;
    report.rouge1 = rouge_n(cand, ref, 1);
    report.rouge2 = rouge_n(cand, ref, 2);
    report.rougeL = rouge_l(cand, ref);
    report.bleu = bleu(cand, ref);
    report.jaccard = jaccard(cand, ref);
    if (gateway != nullptr && !text::trim(candidate).empty() && !text::trim(reference).empty()) {
        report.cosine = cosine_sim(candidate, reference, *gateway, embedding_model);
    }
    return report;
}

std::string format_percent(double unit_value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", unit_value * 100.0);
    return buf;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j = {
        {"rouge1", r.rouge1}, {"rouge2", r.rouge2}, {"rougeL", r.rougeL},
        {"bleu", r.bleu},     {"jaccard", r.jaccard}, {"cosine", nullptr},
    };
    if (r.cosine) {
        j["cosine"] = *r.cosine;
    }
    return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.rouge1 = j.at("rouge1").get<double>();
    r.rouge2 = j.at("rouge2").get<double>();
    r.rougeL = j.at("rougeL").get<double>();
    r.bleu = j.at("bleu").get<double>();
    r.jaccard = j.at("jaccard").get<double>();
    if (const auto it = j.find("cosine"); it != j.end() && !it->is_null()) {
        r.cosine = it->get<double>();
    }
    return r;
}

}  // namespace fwgen::metrics
