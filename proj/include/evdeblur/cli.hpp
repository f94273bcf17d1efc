#pragma once

namespace evdeblur {

/// Entry point of the `evdeblur` tool. Exit codes: 0 success, 1 failed check
/// or runtime error, 2 usage error.
int cli_main(int argc, char** argv);

}  // namespace evdeblur
