#pragma once

namespace ptq::cli {

// Exit codes: 0 ok, 1 other failure, 2 config or shape error, 3 numerical error.
int run(int argc, char** argv);

}  // namespace ptq::cli
