#pragma once

#include <string>

#include "reclm/core.hpp"

namespace reclm {

enum class SubjectKind { User, Item };

// A producer of profile text. Implementations must be deterministic given
// (inputs, seed); the external-API one records transcripts instead.
class ProfileProvider {
  public:
    virtual ~ProfileProvider() = default;
    virtual std::string generate(SubjectKind kind, int subject_id, const std::string& prompt,
                                 std::uint64_t seed) = 0;
    virtual std::string id() const = 0;
    virtual bool deterministic() const { return true; }
};

}  // namespace reclm
