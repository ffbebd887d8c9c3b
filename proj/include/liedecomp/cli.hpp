#pragma once

#include <optional>
#include <string>

namespace liedecomp {

inline constexpr const char* kToolVersion = "liedecomp 0.1.0";

/// Exit codes: 0 success, 1 verification failure, 2 input error,
/// 3 numerical abort.
int cmd_gen(const std::string& spec_file, const std::string& out_dir);
int cmd_train(const std::string& data_file, const std::string& config_file,
              const std::string& out_dir, std::optional<std::uint64_t> seed);
int cmd_eval(const std::string& ckpt_file, const std::string& data_file, double tau_p,
             double tau_id, const std::string& out_dir);
int cmd_render(const std::string& data_file, const std::string& out_dir, bool threshold);
int cmd_verify(const std::string& filter);

/// Parses and dispatches the subcommand grammar.
int run_cli(int argc, const char* const* argv);

/// Worker cap from TOOL_THREADS (defaults to the hardware count, at least 1).
int worker_count();

}  // namespace liedecomp
