#ifndef XPLAIN_CLI_CLI_H_
#define XPLAIN_CLI_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace xplain::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand: gen, train, predict, cf, edges, tree, attribute,
// verify or serve. Returns 0 on success, 1 on a domain error and 2 on a
// usage error (the synopsis goes to `err`). Results go to `out` unless
// --output names a file.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xplain::cli

#endif  // XPLAIN_CLI_CLI_H_
