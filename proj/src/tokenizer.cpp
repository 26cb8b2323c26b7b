#include "reclm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <ostream>

#include "reclm/checkpoint.hpp"

namespace reclm {

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur += char(std::tolower(u));
        } else if (std::isspace(u)) {
            flush();
        } else {
            flush();
            out.push_back(std::string(1, c));
        }
    }
    flush();
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t max_words) {
    Vocabulary v;
    v.id_to_token_ = {"<s>", "</s>", "<pad>"};
    v.byte_base_ = 3;
    for (int b = 0; b < 256; ++b) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
        v.id_to_token_.push_back(buf);
    }
    // frequency order, ties alphabetical, for a stable id assignment
    std::map<std::string, std::size_t> freq;
    for (const auto& text : corpus)
        for (const auto& tok : tokenize_words(text)) ++freq[tok];
    std::vector<std::pair<std::string, std::size_t>> sorted(freq.begin(), freq.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [tok, n] : sorted) {
        if (v.id_to_token_.size() >= max_words + 259) break;
        v.id_to_token_.push_back(tok);
    }
    for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) v.token_to_id_[v.id_to_token_[i]] = int(i);
    return v;
}

int Vocabulary::word_id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize_words(text)) {
        int id = word_id(tok);
        if (id >= 0 && id < byte_base_) id = -1;  // specials never come from raw text
        if (id >= 0) {
            ids.push_back(id);
        } else {
            for (unsigned char b : tok) ids.push_back(byte_base_ + int(b));
        }
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    bool last_was_byte = false;
    for (int id : ids) {
        if (id < 0 || id >= size()) throw ConfigError("decode: token id out of range");
        if (id < byte_base_) continue;  // skip specials
        if (is_byte(id)) {
            if (!last_was_byte && !out.empty()) out += ' ';
            out += char(id - byte_base_);
            last_was_byte = true;
        } else {
            if (!out.empty()) out += ' ';
            out += token(id);
            last_was_byte = false;
        }
    }
    return out;
}

void Vocabulary::write(std::ostream& out) const {
    ckpt::write_u64(out, id_to_token_.size());
    for (const auto& t : id_to_token_) ckpt::write_string(out, t);
}

Vocabulary Vocabulary::read(std::istream& in) {
    Vocabulary v;
    v.id_to_token_.clear();
    auto n = ckpt::read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) v.id_to_token_.push_back(ckpt::read_string(in));
    v.byte_base_ = 3;
    for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) v.token_to_id_[v.id_to_token_[i]] = int(i);
    return v;
}

}  // namespace reclm
