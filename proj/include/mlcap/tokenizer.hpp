#ifndef MLCAP_TOKENIZER_HPP
#define MLCAP_TOKENIZER_HPP

#include "mlcap/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mlcap {

// Word-level tokenizer over the closed caption grammar.
class Tokenizer {
public:
    static constexpr int BOS = 0, EOS = 1, PAD = 2, UNK = 3;

    Tokenizer() = default;

    // Vocabulary = every whitespace token in the corpus captions (all
    // variants, both levels), ordered by frequency then lexicographically.
    static Tokenizer build(const Corpus& corpus) {
        if (corpus.scenes.empty()) throw std::invalid_argument("Tokenizer: empty corpus");
        std::map<std::string, int64_t> freq;
        for (const auto& scene : corpus.scenes)
            for (const auto& obj : scene.objects)
                for (int v = 0; v < kCaptionVariants; ++v) {
                    for (const auto& tok : tokenize(obj.captions.object[v])) freq[tok]++;
                    for (const auto& tok : tokenize(obj.captions.part[v])) freq[tok]++;
                }
        std::vector<std::pair<std::string, int64_t>> sorted(freq.begin(), freq.end());
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Tokenizer tk;
        for (const auto& [word, n] : sorted) {
            tk.id_of_[word] = static_cast<int>(tk.words_.size()) + kNumSpecials;
            tk.words_.push_back(word);
        }
        return tk;
    }

    int vocab_size() const { return static_cast<int>(words_.size()) + kNumSpecials; }

    std::vector<int> encode(const std::string& text, bool append_eos = true) const {
        std::vector<int> ids;
        for (const auto& tok : tokenize(text)) {
            auto it = id_of_.find(tok);
            ids.push_back(it == id_of_.end() ? UNK : it->second);
        }
        if (append_eos) ids.push_back(EOS);
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < kNumSpecials) continue;
            if (id - kNumSpecials >= static_cast<int>(words_.size()))
                throw std::out_of_range("Tokenizer: id out of range");
            if (!out.empty()) out += ' ';
            out += words_[static_cast<size_t>(id - kNumSpecials)];
        }
        return out;
    }

    void save(const std::string& path) const {
        nlohmann::json j;
        j["specials"] = {{"BOS", BOS}, {"EOS", EOS}, {"PAD", PAD}, {"UNK", UNK}};
        nlohmann::json vocab = nlohmann::json::object();
        for (size_t i = 0; i < words_.size(); ++i)
            vocab[words_[i]] = static_cast<int>(i) + kNumSpecials;
        j["vocab"] = vocab;
        std::ofstream(path) << j.dump(2) << "\n";
    }

    static Tokenizer load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("Tokenizer: cannot open " + path);
        nlohmann::json j = nlohmann::json::parse(is);
        std::vector<std::pair<std::string, int>> entries;
        for (auto& [word, id] : j.at("vocab").items())
            entries.emplace_back(word, id.get<int>());
        std::sort(entries.begin(), entries.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        Tokenizer tk;
        for (const auto& [word, id] : entries) {
            tk.id_of_[word] = id;
            tk.words_.push_back(word);
        }
        return tk;
    }

    bool operator==(const Tokenizer& o) const { return words_ == o.words_; }

private:
    static constexpr int kNumSpecials = 4;
    std::vector<std::string> words_;
    std::map<std::string, int> id_of_;
};

}  // namespace mlcap

#endif
