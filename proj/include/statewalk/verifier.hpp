#pragma once
// Exact-match reward: recover the unique action sequence from the prompt's
// problem-state trajectory, roll the state system forward, and compare
// completions token for token.  oracle_completion is an independent
// brute-force implementation used as a standing cross-check.

#include <optional>
#include <vector>

#include "statewalk/env.hpp"

namespace statewalk {

struct RewardOutcome {
  int reward = 0;                               // 1 iff exact match
  std::optional<std::size_t> first_divergence;  // index of the first mismatch
  std::vector<int> expected_ids;                // ground-truth completion
};

struct ParsedPrompt {
  int s0 = 0;
  std::vector<int> problem_states;  // p_0..p_k
};

// Grammar: "S num (P num (C num)?)+ (I num)* :"; throws PromptParseError.
ParsedPrompt parse_prompt(const std::vector<int>& prompt_ids);

// For each j the unique a with T_P(p_j, a) == p_{j+1}; throws NoTransition(j).
std::vector<int> recover_actions(const std::vector<int>& problem_states, const EnvTables& tables);

// Recover actions, roll s_0 through T_S, render the completion.
std::vector<int> ground_truth_completion(const std::vector<int>& prompt_ids,
                                         const EnvTables& tables);

// Reward 1 iff sampled_ids truncated at its first <pad> (inclusive) equals the
// ground truth exactly.
RewardOutcome score(const std::vector<int>& prompt_ids, const std::vector<int>& sampled_ids,
                    const EnvTables& tables);

// Brute-force re-derivation with no shared lookup structure; disagreement with
// ground_truth_completion is a build-stopping defect.
std::vector<int> oracle_completion(const std::vector<int>& prompt_ids, const EnvTables& tables);

}  // namespace statewalk
