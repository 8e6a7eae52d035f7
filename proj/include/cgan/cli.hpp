#pragma once

#include <iosfwd>

namespace cgan {

/// Default output root for runs without --out.
inline constexpr const char* kOutputRootEnv = "CGAN_OUTPUT_ROOT";

/// Subcommands: split, pretrain, finetune, gan-train, generate, eval.
/// Returns 0 on success, 2 on usage errors (bad flags, missing files, config
/// violations) and 1 on runtime failures. Failures print one JSON line to err.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cgan
