#pragma once

#include <cstddef>
#include <cstdint>

// Vocabulary layout shared by the corpus and the model: ids 0..3 are
// reserved, followed by one language start token per language, followed by
// the surface tokens.
namespace vmsst::tokens {

inline constexpr std::int32_t pad = 0;
inline constexpr std::int32_t bos = 1;
inline constexpr std::int32_t eos = 2;
inline constexpr std::int32_t unk = 3;
inline constexpr std::int32_t reserved_count = 4;

constexpr std::int32_t language_start(std::size_t language) {
    return reserved_count + static_cast<std::int32_t>(language);
}

}  // namespace vmsst::tokens
