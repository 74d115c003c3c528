#pragma once

#include <iosfwd>

namespace localsa {

/// Exit codes: 0 success, 1 failed check or replay mismatch, 2 config, IO or module error.
int cli_main(int argc, char** argv);
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace localsa
