#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mpner/train.hpp"

namespace mpner {

struct PredictOptions {
  bool spans = false;   // start:end:label triples instead of entity text
  bool timing = false;  // per-utterance milliseconds on the error stream
};

// One output line per input line. Returns the wall time of each utterance
// in milliseconds (tokenize through decode).
std::vector<double> predict_stream(const NerModel& model, std::istream& in, std::ostream& out,
                                   std::ostream& err, const PredictOptions& options);

// Subcommands: datagen, train, eval, predict, ablation. Returns the exit code.
int run_cli(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace mpner
