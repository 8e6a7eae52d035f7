#pragma once

#include <cstdint>
#include <string>

namespace cgan {

/// Short stanzas from a small probabilistic grammar, separated by blank
/// lines. Stops at the first stanza boundary after ~target_tokens tokens.
std::string synthetic_grammar_text(std::uint64_t seed, std::size_t target_tokens);

/// "a b c a b c ..." on one line: exactly `tokens` tokens once tokenized.
std::string periodic_text(std::size_t tokens);

}  // namespace cgan
