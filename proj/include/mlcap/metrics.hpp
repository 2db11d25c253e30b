#ifndef MLCAP_METRICS_HPP
#define MLCAP_METRICS_HPP

#include "mlcap/corpus.hpp"  // tokenize()

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mlcap {

// ----------------------------------------------------------------- ROUGE-L

// LCS-based F1 between a candidate and one reference, on whitespace tokens.
inline double rouge_l(const std::string& candidate, const std::string& reference) {
    auto c = tokenize(candidate);
    auto r = tokenize(reference);
    if (c.empty() || r.empty()) return 0.0;
    // Classic O(|c|*|r|) LCS table.
    std::vector<std::vector<int>> dp(c.size() + 1, std::vector<int>(r.size() + 1, 0));
    for (size_t i = 1; i <= c.size(); ++i)
        for (size_t j = 1; j <= r.size(); ++j)
            dp[i][j] = (c[i - 1] == r[j - 1]) ? dp[i - 1][j - 1] + 1
                                              : std::max(dp[i - 1][j], dp[i][j - 1]);
    double lcs = dp[c.size()][r.size()];
    if (lcs == 0.0) return 0.0;
    double p = lcs / static_cast<double>(c.size());
    double rec = lcs / static_cast<double>(r.size());
    return 2.0 * p * rec / (p + rec);
}

inline double rouge_l_multi(const std::string& candidate,
                            const std::vector<std::string>& references) {
    double best = 0.0;
    for (const auto& ref : references) best = std::max(best, rouge_l(candidate, ref));
    return best;
}

// ---------------------------------------------------------- Porter stemmer

namespace porter {

inline bool is_consonant(const std::string& w, size_t i) {
    char c = w[i];
    if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
    if (c == 'y') return i == 0 ? true : !is_consonant(w, i - 1);
    return true;
}

// Number of VC sequences in w[0..end).
inline int measure(const std::string& w, size_t end) {
    int m = 0;
    size_t i = 0;
    while (i < end && is_consonant(w, i)) ++i;
    while (i < end) {
        while (i < end && !is_consonant(w, i)) ++i;
        if (i >= end) break;
        ++m;
        while (i < end && is_consonant(w, i)) ++i;
    }
    return m;
}

inline bool has_vowel(const std::string& w, size_t end) {
    for (size_t i = 0; i < end; ++i)
        if (!is_consonant(w, i)) return true;
    return false;
}

inline bool double_consonant(const std::string& w) {
    size_t n = w.size();
    return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// consonant-vowel-consonant ending where the final consonant is not w, x, y.
inline bool ends_cvc(const std::string& w) {
    size_t n = w.size();
    if (n < 3) return false;
    if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1))
        return false;
    char c = w[n - 1];
    return c != 'w' && c != 'x' && c != 'y';
}

inline bool ends_with(const std::string& w, const std::string& suf) {
    return w.size() >= suf.size() && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
}

// Replaces suffix when the stem measure condition holds; returns success.
inline bool strip_suffix(std::string& w, const std::string& suf, const std::string& rep,
                       int min_measure) {
    if (!ends_with(w, suf)) return false;
    size_t stem = w.size() - suf.size();
    if (measure(w, stem) <= min_measure) return true;  // matched but condition failed
    w = w.substr(0, stem) + rep;
    return true;
}

inline std::string stem(std::string w) {
    if (w.size() <= 2) return w;

    // Step 1a: plurals.
    if (ends_with(w, "sses"))
        w.resize(w.size() - 2);
    else if (ends_with(w, "ies"))
        w.resize(w.size() - 2);
    else if (!ends_with(w, "ss") && ends_with(w, "s"))
        w.resize(w.size() - 1);

    // Step 1b: -ed / -ing.
    bool cleanup = false;
    if (ends_with(w, "eed")) {
        if (measure(w, w.size() - 3) > 0) w.resize(w.size() - 1);
    } else if (ends_with(w, "ed") && has_vowel(w, w.size() - 2)) {
        w.resize(w.size() - 2);
        cleanup = true;
    } else if (ends_with(w, "ing") && has_vowel(w, w.size() - 3)) {
        w.resize(w.size() - 3);
        cleanup = true;
    }
    if (cleanup) {
        if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz"))
            w += 'e';
        else if (double_consonant(w) && !ends_with(w, "l") && !ends_with(w, "s") &&
                 !ends_with(w, "z"))
            w.resize(w.size() - 1);
        else if (measure(w, w.size()) == 1 && ends_cvc(w))
            w += 'e';
    }

    // Step 1c: y -> i after a vowel.
    if (ends_with(w, "y") && has_vowel(w, w.size() - 1)) w.back() = 'i';

    // Step 2 (m > 0 double suffixes).
    static const std::vector<std::pair<std::string, std::string>> step2 = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
        {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
        {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
        {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
    for (const auto& [suf, rep] : step2)
        if (strip_suffix(w, suf, rep, 0)) break;

    // Step 3.
    static const std::vector<std::pair<std::string, std::string>> step3 = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
    for (const auto& [suf, rep] : step3)
        if (strip_suffix(w, suf, rep, 0)) break;

    // Step 4 (m > 1 suffix removal).
    static const std::vector<std::string> step4 = {
        "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
        "ent", "ou",   "ism",  "ate", "iti", "ous",  "ive",  "ize"};
    for (const auto& suf : step4) {
        if (!ends_with(w, suf)) continue;
        if (suf == "ent" && ends_with(w, "ment")) continue;  // longest match first
        strip_suffix(w, suf, "", 1);
        break;
    }
    if (ends_with(w, "ion")) {
        size_t stem_len = w.size() - 3;
        if (stem_len > 0 && (w[stem_len - 1] == 's' || w[stem_len - 1] == 't') &&
            measure(w, stem_len) > 1)
            w.resize(stem_len);
    }

    // Step 5a/5b.
    if (ends_with(w, "e")) {
        size_t stem_len = w.size() - 1;
        int m = measure(w, stem_len);
        if (m > 1 || (m == 1 && !ends_cvc(w.substr(0, stem_len)))) w.resize(stem_len);
    }
    if (double_consonant(w) && ends_with(w, "l") && measure(w, w.size()) > 1)
        w.resize(w.size() - 1);
    return w;
}

}  // namespace porter

// ------------------------------------------------------------ METEOR-lite

// Unigram alignment score: greedy exact matches first, then matches on
// Porter stems. F = 10PR / (R + 9P), discounted by a cube fragmentation
// penalty 0.5 * (chunks / matches)^3.
inline double meteor_lite(const std::string& candidate, const std::string& reference) {
    auto c = tokenize(candidate);
    auto r = tokenize(reference);
    if (c.empty() || r.empty()) return 0.0;

    std::vector<int> align(c.size(), -1);  // candidate index -> reference index
    std::vector<bool> used(r.size(), false);
    for (size_t i = 0; i < c.size(); ++i)
        for (size_t j = 0; j < r.size(); ++j)
            if (!used[j] && c[i] == r[j]) {
                align[i] = static_cast<int>(j);
                used[j] = true;
                break;
            }
    std::vector<std::string> cs(c.size()), rs(r.size());
    for (size_t i = 0; i < c.size(); ++i) cs[i] = porter::stem(c[i]);
    for (size_t j = 0; j < r.size(); ++j) rs[j] = porter::stem(r[j]);
    for (size_t i = 0; i < c.size(); ++i) {
        if (align[i] >= 0) continue;
        for (size_t j = 0; j < r.size(); ++j)
            if (!used[j] && cs[i] == rs[j]) {
                align[i] = static_cast<int>(j);
                used[j] = true;
                break;
            }
    }

    int m = 0;
    for (int a : align) m += (a >= 0);
    if (m == 0) return 0.0;
    double p = static_cast<double>(m) / static_cast<double>(c.size());
    double rec = static_cast<double>(m) / static_cast<double>(r.size());
    double f = 10.0 * p * rec / (rec + 9.0 * p);

    // Chunks: maximal runs that are contiguous and in order on both sides.
    int chunks = 0;
    int prev = -2;
    for (size_t i = 0; i < c.size(); ++i) {
        if (align[i] < 0) {
            prev = -2;
            continue;
        }
        if (align[i] != prev + 1) ++chunks;
        prev = align[i];
    }
    double frag = static_cast<double>(chunks) / static_cast<double>(m);
    return f * (1.0 - 0.5 * frag * frag * frag);
}

inline double meteor_lite_multi(const std::string& candidate,
                                const std::vector<std::string>& references) {
    double best = 0.0;
    for (const auto& ref : references) best = std::max(best, meteor_lite(candidate, ref));
    return best;
}

// ---------------------------------------------------------------- CIDEr-R

// Corpus-level consensus metric on a 0..10 scale. Per n (1..4) the candidate
// and each reference become TF-IDF vectors; similarity is the
// reference-clipped cosine, discounted by a Gaussian length penalty and a
// repetition penalty comparing distinct-unigram ratios. IDF comes from
// reference document frequencies over the whole instance set.
struct CiderOptions {
    int max_n = 4;
    double sigma = 6.0;  // length penalty scale, in tokens
};

namespace detail_cider {

using NgramCounts = std::map<std::string, int>;

inline NgramCounts ngrams(const std::vector<std::string>& toks, int n) {
    NgramCounts out;
    if (static_cast<int>(toks.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
        std::string key = toks[i];
        for (int k = 1; k < n; ++k) key += '\x1f' + toks[i + static_cast<size_t>(k)];
        out[key]++;
    }
    return out;
}

inline double distinct_ratio(const std::vector<std::string>& toks) {
    if (toks.empty()) return 0.0;
    std::set<std::string> uniq(toks.begin(), toks.end());
    return static_cast<double>(uniq.size()) / static_cast<double>(toks.size());
}

}  // namespace detail_cider

inline double cider_r(const std::vector<std::string>& candidates,
                      const std::vector<std::vector<std::string>>& references,
                      std::vector<double>* per_instance = nullptr,
                      const CiderOptions& opt = {}) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("cider_r: candidate/reference count mismatch");
    if (candidates.empty()) throw std::invalid_argument("cider_r: empty corpus");
    for (const auto& refs : references)
        if (refs.empty()) throw std::invalid_argument("cider_r: instance without references");

    const size_t N = candidates.size();
    // Reference document frequency per n-gram order.
    std::vector<std::map<std::string, int>> df(static_cast<size_t>(opt.max_n));
    for (const auto& refs : references) {
        std::vector<std::set<std::string>> seen(static_cast<size_t>(opt.max_n));
        for (const auto& ref : refs) {
            auto toks = tokenize(ref);
            for (int n = 1; n <= opt.max_n; ++n)
                for (const auto& [g, cnt] : detail_cider::ngrams(toks, n))
                    seen[static_cast<size_t>(n - 1)].insert(g);
        }
        for (int n = 1; n <= opt.max_n; ++n)
            for (const auto& g : seen[static_cast<size_t>(n - 1)])
                df[static_cast<size_t>(n - 1)][g]++;
    }
    auto idf = [&](int n, const std::string& g) {
        auto it = df[static_cast<size_t>(n - 1)].find(g);
        int d = it == df[static_cast<size_t>(n - 1)].end() ? 0 : it->second;
        return std::log(static_cast<double>(N)) - std::log(std::max(1.0, static_cast<double>(d)));
    };

    double total = 0.0;
    if (per_instance) per_instance->assign(N, 0.0);
    for (size_t i = 0; i < N; ++i) {
        auto ctoks = tokenize(candidates[i]);
        double c_distinct = detail_cider::distinct_ratio(ctoks);
        double score = 0.0;
        for (int n = 1; n <= opt.max_n; ++n) {
            auto cg = detail_cider::ngrams(ctoks, n);
            double cnorm = 0.0;
            for (const auto& [g, cnt] : cg) {
                double v = cnt * idf(n, g);
                cnorm += v * v;
            }
            cnorm = std::sqrt(cnorm);
            double acc = 0.0;
            for (const auto& ref : references[i]) {
                auto rtoks = tokenize(ref);
                auto rg = detail_cider::ngrams(rtoks, n);
                double rnorm = 0.0;
                for (const auto& [g, cnt] : rg) {
                    double v = cnt * idf(n, g);
                    rnorm += v * v;
                }
                rnorm = std::sqrt(rnorm);
                double dot = 0.0;
                for (const auto& [g, cnt] : cg) {
                    auto it = rg.find(g);
                    if (it == rg.end()) continue;
                    double w = idf(n, g);
                    dot += std::min(cnt, it->second) * w * it->second * w;
                }
                double sim = (cnorm > 0.0 && rnorm > 0.0) ? dot / (cnorm * rnorm) : 0.0;
                double dl = static_cast<double>(ctoks.size()) - static_cast<double>(rtoks.size());
                double len_pen = std::exp(-dl * dl / (2.0 * opt.sigma * opt.sigma));
                double r_distinct = detail_cider::distinct_ratio(rtoks);
                double rep_pen =
                    r_distinct > 0.0 ? std::min(1.0, c_distinct / r_distinct) : 0.0;
                acc += len_pen * rep_pen * sim;
            }
            score += acc / static_cast<double>(references[i].size());
        }
        score = 10.0 * score / static_cast<double>(opt.max_n);
        if (per_instance) (*per_instance)[i] = score;
        total += score;
    }
    return total / static_cast<double>(N);
}

// ------------------------------------------------- IoU-gated corpus scores

// One ground-truth instance paired with whatever prediction was matched to
// it: the decoded caption and the mask IoU (0 when nothing was matched).
struct GatedInstance {
    std::vector<std::string> references;
    std::string candidate;
    double iou = 0.0;
};

struct MetricReport {
    double rouge_l = 0.0;   // 0..100
    double meteor = 0.0;    // 0..100
    double cider_r = 0.0;   // 0..100
    int gated_in = 0;       // instances whose IoU cleared the threshold
    int total = 0;
};

// Per-instance weight is 1 iff IoU strictly exceeds the threshold, else 0;
// the average always divides by the total ground-truth count, so missed
// instances pull the corpus score down. Reported on a 0..100 scale.
inline MetricReport gated_corpus_scores(const std::vector<GatedInstance>& instances,
                                        double iou_threshold = 0.5) {
    if (instances.empty()) throw std::invalid_argument("gated_corpus_scores: no instances");
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    for (const auto& inst : instances) {
        if (inst.references.empty())
            throw std::invalid_argument("gated_corpus_scores: instance without references");
        cands.push_back(inst.candidate);
        refs.push_back(inst.references);
    }
    std::vector<double> cider;
    cider_r(cands, refs, &cider);

    MetricReport rep;
    rep.total = static_cast<int>(instances.size());
    for (size_t i = 0; i < instances.size(); ++i) {
        if (!(instances[i].iou > iou_threshold)) continue;
        rep.gated_in++;
        rep.rouge_l += rouge_l_multi(instances[i].candidate, instances[i].references);
        rep.meteor += meteor_lite_multi(instances[i].candidate, instances[i].references);
        rep.cider_r += cider[i];
    }
    double n = static_cast<double>(rep.total);
    rep.rouge_l = 100.0 * rep.rouge_l / n;
    rep.meteor = 100.0 * rep.meteor / n;
    rep.cider_r = 10.0 * rep.cider_r / n;  // 0..10 per instance -> 0..100
    return rep;
}

}  // namespace mlcap

#endif
