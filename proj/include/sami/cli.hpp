// Command-line driver. Subcommands: gen-data, train, sample, encode,
// traverse, analyze, oracle-check. Every run appends a manifest line
// (command, config hash, seed, outputs) to run_journal.tsv next to the
// primary output. Exit codes: 0 success, 1 runtime failure, 2 usage error.
#pragma once

namespace sami {

int run_cli(int argc, const char* const* argv);

}  // namespace sami
