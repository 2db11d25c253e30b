#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlcap/metrics.hpp"
#include "mlcap/rng.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

using namespace mlcap;

namespace {

// Independent LCS oracle: plain recursion with memo on (i, j), written
// top-down rather than as the bottom-up table the implementation uses.
int lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::map<std::pair<size_t, size_t>, int> memo;
    std::function<int(size_t, size_t)> go = [&](size_t i, size_t j) -> int {
        if (i == a.size() || j == b.size()) return 0;
        auto key = std::make_pair(i, j);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        int best = a[i] == b[j] ? 1 + go(i + 1, j + 1)
                                : std::max(go(i + 1, j), go(i, j + 1));
        memo[key] = best;
        return best;
    };
    return go(0, 0);
}

std::string random_sentence(std::mt19937_64& rng, int max_len) {
    static const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    int len = uniform_int(rng, 1, max_len);
    std::string s;
    for (int i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += words[static_cast<size_t>(uniform_int(rng, 0, 4))];
    }
    return s;
}

// Independent CIDEr-R oracle: long-double arithmetic, n-grams kept as token
// vectors, dot product iterated over the reference side.
double cider_oracle(const std::vector<std::string>& cands,
                    const std::vector<std::vector<std::string>>& refs, size_t which,
                    double sigma = 6.0) {
    using Gram = std::vector<std::string>;
    const size_t N = cands.size();
    auto grams_of = [](const std::vector<std::string>& toks, int n) {
        std::map<Gram, int> out;
        for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
            out[Gram(toks.begin() + static_cast<long>(i),
                     toks.begin() + static_cast<long>(i) + n)]++;
        return out;
    };
    long double score = 0.0L;
    for (int n = 1; n <= 4; ++n) {
        std::map<Gram, int> df;
        for (const auto& rset : refs) {
            std::set<Gram> seen;
            for (const auto& r : rset)
                for (const auto& [g, cnt] : grams_of(tokenize(r), n)) seen.insert(g);
            for (const auto& g : seen) df[g]++;
        }
        auto idf = [&](const Gram& g) -> long double {
            auto it = df.find(g);
            long double d = it == df.end() ? 0 : it->second;
            return logl((long double)N) - logl(std::max<long double>(1.0L, d));
        };
        auto ctoks = tokenize(cands[which]);
        auto cg = grams_of(ctoks, n);
        long double cnorm = 0.0L;
        for (const auto& [g, cnt] : cg) cnorm += (cnt * idf(g)) * (cnt * idf(g));
        cnorm = sqrtl(cnorm);
        std::set<std::string> cu(ctoks.begin(), ctoks.end());
        long double cdist =
            ctoks.empty() ? 0.0L : (long double)cu.size() / (long double)ctoks.size();
        long double acc = 0.0L;
        for (const auto& r : refs[which]) {
            auto rtoks = tokenize(r);
            auto rg = grams_of(rtoks, n);
            long double rnorm = 0.0L, dot = 0.0L;
            for (const auto& [g, cnt] : rg) {
                rnorm += (cnt * idf(g)) * (cnt * idf(g));
                auto it = cg.find(g);
                if (it != cg.end())
                    dot += std::min(cnt, it->second) * idf(g) * cnt * idf(g);
            }
            rnorm = sqrtl(rnorm);
            long double sim = (cnorm > 0 && rnorm > 0) ? dot / (cnorm * rnorm) : 0.0L;
            long double dl = (long double)ctoks.size() - (long double)rtoks.size();
            long double lp = expl(-dl * dl / (2.0L * sigma * sigma));
            std::set<std::string> ru(rtoks.begin(), rtoks.end());
            long double rdist =
                rtoks.empty() ? 0.0L : (long double)ru.size() / (long double)rtoks.size();
            long double rp = rdist > 0 ? std::min(1.0L, cdist / rdist) : 0.0L;
            acc += lp * rp * sim;
        }
        score += acc / (long double)refs[which].size();
    }
    return static_cast<double>(10.0L * score / 4.0L);
}

// Deterministic fixture: 20 candidate/reference groups with a mix of exact
// hits, paraphrases, truncations and stutters.
void fixture(std::vector<std::string>& cands, std::vector<std::vector<std::string>>& refs) {
    static const std::vector<std::string> colors{"red", "blue", "green", "grey", "white"};
    static const std::vector<std::string> nouns{"chair", "table", "lamp", "shelf"};
    for (int i = 0; i < 20; ++i) {
        std::string color = colors[static_cast<size_t>(i) % colors.size()];
        std::string noun = nouns[static_cast<size_t>(i) % nouns.size()];
        std::string base = "a " + color + " " + noun + " with wooden legs";
        std::vector<std::string> group{base, "the " + color + " " + noun + " has wooden legs"};
        std::string cand;
        switch (i % 5) {
            case 0: cand = base; break;
            case 1: cand = "a " + color + " " + noun; break;
            case 2: cand = "a " + noun + " that is " + color; break;
            case 3: cand = noun + " " + noun + " " + noun; break;
            default: cand = "a shiny purple object"; break;
        }
        cands.push_back(cand);
        refs.push_back(group);
    }
}

}  // namespace

TEST_CASE("rouge-l: analytic cases") {
    CHECK(rouge_l("a b c d", "a c d") == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    CHECK(rouge_l("a b c", "a b c") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rouge_l("x y z", "a b c") == 0.0);
    CHECK(rouge_l("", "a b") == 0.0);
    CHECK(rouge_l("a b", "") == 0.0);
    // Max over references.
    CHECK(rouge_l_multi("a b c", {"x y", "a b c", "a b"}) == doctest::Approx(1.0));
}

TEST_CASE("rouge-l agrees with a recursive LCS oracle on random sentences") {
    auto rng = make_rng(5, "rouge-fuzz");
    for (int trial = 0; trial < 60; ++trial) {
        std::string c = random_sentence(rng, 9);
        std::string r = random_sentence(rng, 9);
        auto ct = tokenize(c), rt = tokenize(r);
        double lcs = lcs_oracle(ct, rt);
        double expect = 0.0;
        if (lcs > 0) {
            double p = lcs / static_cast<double>(ct.size());
            double rec = lcs / static_cast<double>(rt.size());
            expect = 2 * p * rec / (p + rec);
        }
        CHECK(rouge_l(c, r) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("porter stemmer: canonical examples") {
    CHECK(porter::stem("caresses") == "caress");
    CHECK(porter::stem("ponies") == "poni");
    CHECK(porter::stem("cats") == "cat");
    CHECK(porter::stem("agreed") == "agre");
    CHECK(porter::stem("plastered") == "plaster");
    CHECK(porter::stem("motoring") == "motor");
    CHECK(porter::stem("running") == "run");
    CHECK(porter::stem("runs") == "run");
    CHECK(porter::stem("happy") == "happi");
    CHECK(porter::stem("relational") == "relat");
    CHECK(porter::stem("conditional") == "condit");
    CHECK(porter::stem("hopeful") == "hope");
    CHECK(porter::stem("goodness") == "good");
    CHECK(porter::stem("adjustable") == "adjust");
    CHECK(porter::stem("activate") == "activ");
    CHECK(porter::stem("probate") == "probat");
    CHECK(porter::stem("rate") == "rate");
    CHECK(porter::stem("cease") == "ceas");
}

TEST_CASE("meteor-lite: identity, fragmentation, stem matching") {
    // Perfect m-token match: P = R = 1, one chunk -> 1 - 0.5/m^3.
    for (int m : {1, 2, 4, 7}) {
        std::string s;
        for (int i = 0; i < m; ++i) s += (i ? " w" : "w") + std::to_string(i);
        double expect = 1.0 - 0.5 / (static_cast<double>(m) * m * m);
        CHECK(meteor_lite(s, s) == doctest::Approx(expect).epsilon(1e-12));
    }
    // Full match but maximally fragmented: four chunks of one -> penalty 0.5.
    CHECK(meteor_lite("a b c d", "b a d c") == doctest::Approx(0.5).epsilon(1e-12));
    // Stemmed alignment recovers morphological variants.
    double stemmed = meteor_lite("the cat running", "the cat runs");
    double unstemmed = meteor_lite("the cat running", "the cat walks");
    CHECK(stemmed > unstemmed);
    CHECK(stemmed == doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-12));
    CHECK(meteor_lite("x y", "p q") == 0.0);
    CHECK(meteor_lite("", "a") == 0.0);
    // Max over references.
    CHECK(meteor_lite_multi("a b", {"c d", "a b"}) ==
          doctest::Approx(1.0 - 0.5 / 8.0).epsilon(1e-12));
}

TEST_CASE("cider-r: perfect consensus on corpus-unique captions scores 10") {
    std::vector<std::string> cands{"a red chair with four legs", "a blue table with one drawer"};
    std::vector<std::vector<std::string>> refs{{cands[0]}, {cands[1]}};
    std::vector<double> per;
    cider_r(cands, refs, &per);
    CHECK(per[0] == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(per[1] == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("cider-r: repetition and length penalties bite") {
    std::vector<std::vector<std::string>> refs{{"a tall green lamp"}, {"a short white shelf"}};
    auto score_of = [&](const std::string& cand) {
        std::vector<double> per;
        cider_r({cand, "a short white shelf"}, refs, &per);
        return per[0];
    };
    // Stuttering the right words scores below saying them once each.
    CHECK(score_of("lamp lamp lamp lamp") < score_of("a tall green lamp"));
    // Growing length mismatch decays the score monotonically.
    double s0 = score_of("a tall green lamp");
    double s1 = score_of("a tall green lamp with x y z q");
    double s2 = score_of("a tall green lamp with x y z q r s t u v w");
    CHECK(s0 > s1);
    CHECK(s1 > s2);
}

TEST_CASE("cider-r: invariant under instance reordering") {
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    fixture(cands, refs);
    std::vector<double> per;
    cider_r(cands, refs, &per);

    std::vector<size_t> perm(cands.size());
    std::iota(perm.begin(), perm.end(), 0u);
    auto rng = make_rng(6, "perm");
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> c2;
    std::vector<std::vector<std::string>> r2;
    for (size_t p : perm) {
        c2.push_back(cands[p]);
        r2.push_back(refs[p]);
    }
    std::vector<double> per2;
    cider_r(c2, r2, &per2);
    for (size_t i = 0; i < perm.size(); ++i)
        CHECK(per2[i] == doctest::Approx(per[perm[i]]).epsilon(1e-12));
}

TEST_CASE("cider-r matches an independently written oracle on the fixture") {
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    fixture(cands, refs);
    std::vector<double> per;
    double mean = cider_r(cands, refs, &per);
    double oracle_mean = 0.0;
    for (size_t i = 0; i < cands.size(); ++i) {
        double o = cider_oracle(cands, refs, i);
        CHECK(per[i] == doctest::Approx(o).epsilon(1e-10));
        oracle_mean += o;
    }
    CHECK(mean == doctest::Approx(oracle_mean / cands.size()).epsilon(1e-10));

    CHECK_THROWS_AS(cider_r({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(cider_r({"a"}, {{}}), std::invalid_argument);
    CHECK_THROWS_AS(cider_r({"a", "b"}, {{"a"}}), std::invalid_argument);
}

TEST_CASE("gated scores: strict IoU threshold, denominator is all instances") {
    std::vector<GatedInstance> insts;
    insts.push_back({{"a red chair with arms"}, "a red chair with arms", 0.3});
    insts.push_back({{"a blue table with drawers"}, "a blue table with drawers", 0.5});
    insts.push_back({{"a green lamp with a shade"}, "a green lamp with a shade", 0.9});

    auto rep = gated_corpus_scores(insts, 0.5);
    CHECK(rep.total == 3);
    CHECK(rep.gated_in == 1);  // 0.5 does not strictly exceed 0.5
    // Only the third instance counts; its per-instance scores are perfect.
    CHECK(rep.rouge_l == doctest::Approx(100.0 / 3.0).epsilon(1e-9));
    double m = 1.0 - 0.5 / (6.0 * 6.0 * 6.0);
    CHECK(rep.meteor == doctest::Approx(100.0 * m / 3.0).epsilon(1e-9));
    CHECK(rep.cider_r > 0.0);

    // Raising the threshold never raises any score.
    double prev_r = std::numeric_limits<double>::infinity();
    double prev_c = std::numeric_limits<double>::infinity();
    for (double thr : {0.0, 0.25, 0.5, 0.8, 1.0}) {
        auto r = gated_corpus_scores(insts, thr);
        CHECK(r.rouge_l <= prev_r + 1e-12);
        CHECK(r.cider_r <= prev_c + 1e-12);
        prev_r = r.rouge_l;
        prev_c = r.cider_r;
    }
    CHECK(gated_corpus_scores(insts, 1.0).rouge_l == 0.0);
    CHECK_THROWS_AS(gated_corpus_scores({}, 0.5), std::invalid_argument);
}
