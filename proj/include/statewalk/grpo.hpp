#pragma once
// Group-relative policy optimization: grouped rollouts scored by the verifier,
// group-normalized advantages, and a clipped surrogate with a low-variance KL
// penalty against the frozen pre-RL reference plus an entropy bonus.

#include <filesystem>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "statewalk/env.hpp"
#include "statewalk/model.hpp"
#include "statewalk/runio.hpp"
#include "statewalk/trainer.hpp"

namespace statewalk {

struct RlConfig {
  int train_batch_size = 32;          // prompts per collection
  int n_rollouts = 8;                 // samples per prompt
  double rollout_temperature = 1.0;
  double top_p = 1.0;
  int max_prompt_len = 66;            // includes <bos>
  int max_response_len = 64;
  int ppo_epochs = 4;                 // gradient passes per collected batch
  double clip_ratio = 0.2;
  double entropy_coeff = 0.001;
  double kl_loss_coef = 0.001;        // low-variance estimator against the reference
  double grad_clip = 0.2;             // global parameter-gradient norm
  double learning_rate = 5e-5;        // constant, no warmup
  int total_epochs = 100;             // passes over the RL split
  int mini_batch = 32;                // prompts per optimizer step within an inner epoch
  long validation_freq = 5;           // epochs between greedy pass@1 probes
  long save_freq = 10;                // epochs between checkpoints
  std::uint64_t seed = 42;
  int max_new_tokens_eval = 64;       // decode budget for validation probes

  void validate() const {
    if (train_batch_size < 1) throw InvalidConfig("train_batch_size must be positive");
    if (n_rollouts < 2) throw InvalidConfig("n_rollouts must be at least 2");
    if (rollout_temperature < 0.0) throw InvalidConfig("rollout_temperature must be >= 0");
    if (top_p <= 0.0 || top_p > 1.0) throw InvalidConfig("top_p must lie in (0, 1]");
    if (max_prompt_len < 2) throw InvalidConfig("max_prompt_len must be at least 2");
    if (max_response_len < 1) throw InvalidConfig("max_response_len must be positive");
    if (ppo_epochs < 1) throw InvalidConfig("ppo_epochs must be positive");
    if (clip_ratio <= 0.0 || clip_ratio >= 1.0) throw InvalidConfig("clip_ratio must lie in (0, 1)");
    if (entropy_coeff < 0.0) throw InvalidConfig("entropy_coeff must be >= 0");
    if (kl_loss_coef < 0.0) throw InvalidConfig("kl_loss_coef must be >= 0");
    if (grad_clip < 0.0) throw InvalidConfig("grad_clip must be >= 0");
    if (learning_rate <= 0.0) throw InvalidConfig("learning_rate must be positive");
    if (total_epochs < 1) throw InvalidConfig("total_epochs must be positive");
    if (mini_batch < 1 || mini_batch > train_batch_size)
      throw InvalidConfig("mini_batch must lie in [1, train_batch_size]");
    if (train_batch_size % mini_batch != 0)
      throw InvalidConfig("mini_batch must divide train_batch_size");
    if (validation_freq < 1) throw InvalidConfig("validation_freq must be positive");
    if (save_freq < 1) throw InvalidConfig("save_freq must be positive");
    if (max_new_tokens_eval < 1) throw InvalidConfig("max_new_tokens_eval must be positive");
  }

  nlohmann::json to_json() const;
  static RlConfig from_json(const nlohmann::json& j);
};

// One prompt's sampled group with everything the surrogate loss needs.
struct RolloutGroup {
  long prompt_index = -1;                        // index into the RL split
  std::vector<int> prompt_ids;                   // raw prompt tokens (no <bos>)
  std::vector<std::vector<int>> completions;     // sampled tokens, <pad>-terminated unless capped
  Eigen::VectorXd rewards;                       // exact-match {0,1} per rollout
  std::vector<Eigen::VectorXd> old_logprobs;     // per rollout, per response token
  std::vector<Eigen::VectorXd> ref_logprobs;
  Eigen::VectorXd advantages;                    // (r - mean) / (popstd + 1e-6), broadcast
};

// (r - mean) / (population std + 1e-6); an all-equal group gets exact zeros.
Eigen::VectorXd group_advantages(const Eigen::VectorXd& rewards);

struct GrpoLossOutput {
  double loss = 0.0;          // mean over the group's response tokens
  double policy_sum = 0.0;    // unnormalized sums for batch-level aggregation
  double kl_sum = 0.0;
  double entropy_sum = 0.0;
  long clip_active = 0;       // tokens with |rho - 1| > clip_ratio
  long n_tokens = 0;
  // d(token term)/d(new_logprob) per rollout per token, before any 1/N mean:
  // the policy path plus the KL path; entropy is a function of the full
  // distribution and is handled where logits are available.
  std::vector<Eigen::VectorXd> dsum_dnewlp;
};

// Clipped-surrogate + KL terms for one group given fresh per-token logprobs
// and per-position full-distribution entropies (aligned with completions).
GrpoLossOutput grpo_loss(const RolloutGroup& group,
                         const std::vector<Eigen::VectorXd>& new_logprobs,
                         const std::vector<Eigen::VectorXd>& entropies, const RlConfig& cfg);

// Sample n_rollouts completions per prompt, score them, and fill per-token
// logprobs: old from the current policy, ref from the frozen reference, both
// recomputed with the packed training forward so ratios start at exactly 1.
std::vector<RolloutGroup> collect_batch(const Parameters<float>& params,
                                        const Parameters<float>& ref_params,
                                        const EnvTables& tables,
                                        const std::vector<const ProblemInstance*>& prompts,
                                        const std::vector<long>& prompt_indices,
                                        const RlConfig& cfg,
                                        std::vector<std::vector<Rng>>& rngs);

struct GrpoBatchStats {
  double loss = 0.0;  // per-token mean over the shard's concatenated response tokens
  double policy_sum = 0.0;
  double kl_sum = 0.0;
  double entropy_sum = 0.0;
  long clip_active = 0;
  long n_tokens = 0;
};

// Loss terms and parameter gradients for one collected shard (no clipping, no
// update). The gradient is of the per-token mean surrogate over the shard.
GrpoBatchStats grpo_gradient(const Parameters<float>& params,
                             const std::vector<RolloutGroup>& shard, const RlConfig& cfg,
                             Parameters<float>& grads);

// Scale all gradients by min(1, max_norm / global_norm); returns the global norm.
double clip_global_norm(Parameters<float>& grads, double max_norm);

struct RlResult {
  long total_epochs = 0;
  std::filesystem::path final_checkpoint;
  std::vector<double> mean_rewards;  // one entry per collected batch
};

// Full GRPO run from a pretrained checkpoint; writes metrics.jsonl rows with
// phase "rl" and periodic checkpoints into the run directory.
RlResult train_rl(const RlConfig& cfg, const ModelConfig& model_cfg, const Dataset& dataset,
                  const std::filesystem::path& pretrained_checkpoint, const RunDir& run);

}  // namespace statewalk
