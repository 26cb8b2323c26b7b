#pragma once

#include <memory>
#include <string>
#include <vector>

#include "reclm/core.hpp"
#include "reclm/data.hpp"

namespace reclm {

class TextEncoder {
  public:
    virtual ~TextEncoder() = default;
    virtual Vec encode(const std::string& text) const = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
    virtual bool deterministic() const { return true; }
};

// Default encoder: each token hashes to a signed coordinate; the text vector
// is the sum over tokens, so encode("a b") == encode("a") + encode("b").
class HashedBagEncoder : public TextEncoder {
  public:
    explicit HashedBagEncoder(int dim = 64);
    Vec encode(const std::string& text) const override;
    int dim() const override { return dim_; }
    std::string id() const override;

    static std::vector<std::string> split_tokens(const std::string& text);

  private:
    int dim_;
};

struct TextFeatureMatrix {
    Mat features;  // items x d_t
    std::string encoder_id;
};

TextFeatureMatrix encode_catalog(const TextEncoder& encoder, const ItemCatalog& catalog);

}  // namespace reclm
