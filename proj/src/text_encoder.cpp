#include "reclm/text_encoder.hpp"

#include <cctype>

namespace reclm {

HashedBagEncoder::HashedBagEncoder(int dim) : dim_(dim) {
    if (dim < 1) throw ConfigError("encoder dimension must be positive");
}

std::string HashedBagEncoder::id() const { return "hashed-bag-v1-d" + std::to_string(dim_); }

std::vector<std::string> HashedBagEncoder::split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += char(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vec HashedBagEncoder::encode(const std::string& text) const {
    Vec v = Vec::Zero(dim_);
    for (const auto& tok : split_tokens(text)) {
        std::uint64_t h = fnv1a(tok);
        int idx = int(h % std::uint64_t(dim_));
        double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
        v[idx] += sign;
    }
    return v;
}

TextFeatureMatrix encode_catalog(const TextEncoder& encoder, const ItemCatalog& catalog) {
    std::string missing;
    for (int i = 0; i < catalog.size(); ++i)
        if (catalog.items[i].title.empty()) missing += (missing.empty() ? "" : ",") + std::to_string(i);
    if (!missing.empty()) throw ConfigError("items without text: " + missing);

    TextFeatureMatrix out;
    out.encoder_id = encoder.id();
    out.features = Mat::Zero(catalog.size(), encoder.dim());
    for (int i = 0; i < catalog.size(); ++i)
        out.features.row(i) = encoder.encode(catalog.items[i].joined_text()).transpose();
    return out;
}

}  // namespace reclm
