#pragma once
// Prefix tree over a set of scored rollouts for one prompt, plus a static
// self-contained HTML rendering of it.
//
// The tree branches on token ids: every rollout is inserted root-down, and a
// node exists for each distinct prefix observed. Each node tracks how many
// rollouts reach it (reach_count, shown as the absolute probability
// reach_count/M) and the mean reward of those rollouts (accuracy). The
// renderer colors nodes red (accuracy 0) through green (accuracy 1) linearly
// and shows probabilities to three decimals.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "statewalk/errors.hpp"

namespace statewalk {

// One completed rollout with its exact-match outcome.
struct ScoredSequence {
  std::vector<int> tokens;
  bool correct = false;
};

struct TreeNode {
  int token = -1;  // -1 marks the root (the empty prefix)
  int depth = 0;
  long reach_count = 0;
  long correct_count = 0;          // rollouts through this node that scored 1
  long terminal_count = 0;         // rollouts ending exactly at this node
  std::vector<long> children;      // node ids, ordered by token id
};

struct SolutionTree {
  std::string prompt;  // rendered prompt text; set by the caller of emit_html
  long total_rollouts = 0;
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double reach_prob(long id) const;   // reach_count / M
  double accuracy(long id) const;     // correct_count / reach_count
  double conditional(long id) const;  // reach_count / parent reach_count (root: 1)

  nlohmann::json to_json() const;
  static SolutionTree from_json(const nlohmann::json& j);
};

// Classic prefix insertion over the rollout set. Throws EmptyRolloutSet when
// rollouts is empty.
SolutionTree build_tree(const std::vector<ScoredSequence>& rollouts);

// Writes a single self-contained HTML file (inline style and script, no
// external fetches) and a sibling tree.json next to it. Throws IoFailure.
void emit_html(const SolutionTree& tree, const std::string& prompt_text,
               const std::filesystem::path& out_path);

}  // namespace statewalk
