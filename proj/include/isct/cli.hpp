#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "isct/signature.hpp"
#include "isct/tensor_core.hpp"

namespace isct {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // verification failure or training divergence
    kExitUsage = 2,    // bad flags or configuration
    kExitIo = 3,       // unreadable, unparsable or corrupt files
};

/// Delimited text, one point per row. Separators may be commas, semicolons,
/// tabs or spaces; '#' starts a comment line; a non-numeric first row is
/// taken as a header. ParseError on ragged rows, bad numbers or no points.
Path parse_path_text(std::string_view text);

/// "0,1;2,3" -> {{0,1},{2,3}}. ParseError on malformed input.
ChannelSpec parse_channel_list(std::string_view text);

/// Level-offset table followed by one line per level and the flat vector.
std::string format_signature(const TruncatedTensor& sig, std::string_view kind, std::size_t steps);

/// Runs the tool with argv-style arguments (args[0] is the program name)
/// and returns the exit code. Normal output goes to `out`, diagnostics to
/// `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace isct
