#pragma once
// Error taxonomy shared by all modules. The CLI maps InvalidConfig and the
// parse-level errors to exit code 2; everything else to exit code 3.

#include <cstddef>
#include <stdexcept>
#include <string>

namespace statewalk {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidConfig : Error {
  explicit InvalidConfig(const std::string& what) : Error("invalid config: " + what) {}
};

struct UnknownSymbol : Error {
  std::size_t position;
  std::string text;
  UnknownSymbol(std::size_t pos, std::string tok)
      : Error("unknown symbol at position " + std::to_string(pos) + ": '" + tok + "'"),
        position(pos),
        text(std::move(tok)) {}
};

struct IdOutOfRange : Error {
  std::size_t index;
  int id;
  IdOutOfRange(std::size_t idx, int bad_id)
      : Error("token id out of range at index " + std::to_string(idx) + ": " +
              std::to_string(bad_id)),
        index(idx),
        id(bad_id) {}
};

struct IoFailure : Error {
  std::string path;
  IoFailure(const std::string& what, std::string p)
      : Error("io failure: " + what + " (" + p + ")"), path(std::move(p)) {}
};

struct NoTransition : Error {
  std::size_t step;
  explicit NoTransition(std::size_t j)
      : Error("no problem-state transition matches step " + std::to_string(j)), step(j) {}
};

struct PromptParseError : Error {
  std::size_t position;
  explicit PromptParseError(std::size_t pos, const std::string& what = "malformed prompt")
      : Error(what + " at token " + std::to_string(pos)), position(pos) {}
};

struct SequenceTooLong : Error {
  std::size_t length;
  std::size_t limit;
  SequenceTooLong(std::size_t len, std::size_t lim)
      : Error("sequence length " + std::to_string(len) + " exceeds limit " + std::to_string(lim)),
        length(len),
        limit(lim) {}
};

struct EmptyMask : Error {
  EmptyMask() : Error("loss mask selects zero positions") {}
};

struct NonFiniteLoss : Error {
  long step;
  explicit NonFiniteLoss(long s) : Error("non-finite loss at step " + std::to_string(s)), step(s) {}
};

struct CheckpointIoFailure : Error {
  std::string path;
  CheckpointIoFailure(const std::string& what, std::string p)
      : Error("checkpoint io failure: " + what + " (" + p + ")"), path(std::move(p)) {}
};

struct NoRecords : Error {
  NoRecords() : Error("no records match the query") {}
};

struct InsufficientSamples : Error {
  std::string problem;
  long long seed;
  InsufficientSamples(std::string problem_id, long long s, std::size_t have, std::size_t want)
      : Error("problem " + problem_id + " seed " + std::to_string(s) + " has " +
              std::to_string(have) + " samples, need " + std::to_string(want)),
        problem(std::move(problem_id)),
        seed(s) {}
};

struct SchemaError : Error {
  std::size_t line;
  SchemaError(std::size_t l, const std::string& what)
      : Error("record schema error at line " + std::to_string(l) + ": " + what), line(l) {}
};

struct DuplicateKey : Error {
  std::size_t line;
  explicit DuplicateKey(std::size_t l)
      : Error("duplicate record key at line " + std::to_string(l)), line(l) {}
};

struct EmptyRolloutSet : Error {
  EmptyRolloutSet() : Error("cannot build a solution tree from zero rollouts") {}
};

}  // namespace statewalk
