#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "reclm/core.hpp"

namespace reclm {

// Splits text into lowercase word tokens and single punctuation tokens.
std::vector<std::string> tokenize_words(const std::string& text);

// Word-level vocabulary with 256 byte-fallback tokens for out-of-vocab text.
class Vocabulary {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;

    static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_words = 20000);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int size() const { return int(id_to_token_.size()); }
    int word_id(const std::string& token) const;  // -1 when absent
    const std::string& token(int id) const { return id_to_token_.at(std::size_t(id)); }
    bool is_byte(int id) const { return id >= byte_base_ && id < byte_base_ + 256; }

    void write(std::ostream& out) const;
    static Vocabulary read(std::istream& in);

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    int byte_base_ = 3;
};

}  // namespace reclm
