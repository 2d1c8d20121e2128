#pragma once
// Rollout-record metrics: per-problem precision, self-difficulty sorting,
// pass@K, Coverage(K, T*), matched-problem analysis, and temperature sweeps
// over a checkpoint. Works identically on synthetic sweeps and ingested
// external records.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "statewalk/env.hpp"
#include "statewalk/model.hpp"

namespace statewalk {

// The atom every metric is computed from: one scored sample of one problem.
struct MetricRecord {
  std::string problem_id;
  std::string split;
  std::string model_tag;  // e.g. "pre_rl" / "post_rl"
  double temperature = 0.0;
  long long seed = 0;
  long sample_index = 0;
  int correct = 0;  // {0,1}

  nlohmann::json to_json() const;
};

// Sweep/aggregation defaults mirroring the synthetic protocol: temperatures
// 0.0..1.2 in steps of 0.2, best-of-128 sampling across 5 seeds.
struct EvalConfig {
  std::vector<double> temperature_grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2};
  int k = 128;
  int n_seeds = 5;  // sampling seeds 0..n_seeds-1
  double top_p = 1.0;
  int max_new_tokens = 64;
  double matched_temperature = 1.0;  // pairing temperature for pre/post deltas
  std::string split = "eval";

  void validate() const {
    if (temperature_grid.empty()) throw InvalidConfig("temperature_grid must be non-empty");
    for (const double t : temperature_grid)
      if (t < 0.0) throw InvalidConfig("temperatures must be >= 0");
    if (k < 1) throw InvalidConfig("k must be positive");
    if (n_seeds < 1) throw InvalidConfig("n_seeds must be positive");
    if (top_p <= 0.0 || top_p > 1.0) throw InvalidConfig("top_p must lie in (0, 1]");
    if (max_new_tokens < 1) throw InvalidConfig("max_new_tokens must be positive");
    if (matched_temperature < 0.0) throw InvalidConfig("matched_temperature must be >= 0");
  }
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Aggregations over record sets

// Fraction of correct samples for one (problem, tag, temperature) cell,
// pooled over seeds. Throws NoRecords when nothing matches.
double precision(const std::vector<MetricRecord>& records, const std::string& problem_id,
                 const std::string& model_tag, double temperature);

// Self-difficulty-sorted precision curve at one temperature: problems ordered
// by ascending precision, ties broken by problem_id.
struct PrecisionCurve {
  double temperature = 0.0;
  std::vector<std::string> problem_ids;
  std::vector<double> precision;

  nlohmann::json to_json() const;
};
PrecisionCurve precision_curve(const std::vector<MetricRecord>& records, double temperature);

struct PassAtKReport {
  int k = 0;
  double temperature = 0.0;
  std::vector<long long> seeds;                 // ascending
  std::vector<std::string> problem_ids;         // ascending
  std::vector<std::vector<int>> solved;         // [problem][seed] in {0,1}
  std::vector<double> per_seed_mean;            // mean over problems
  double mean = 0.0;                            // over seeds
  double std_dev = 0.0;                         // population std over seeds

  nlohmann::json to_json() const;
};

// A problem counts as solved for a seed iff any of its first K samples
// (sample_index < K) is correct. Requires exactly K such samples per
// (problem, seed); throws InsufficientSamples otherwise.
PassAtKReport pass_at_k(const std::vector<MetricRecord>& records, int k, double temperature);

struct CoverageReport {
  int k = 0;
  std::vector<double> grid;             // ascending
  std::vector<double> mean_per_temp;    // pass@K mean over seeds
  std::vector<double> std_per_temp;
  double coverage = 0.0;                // max over the grid
  double t_star = 0.0;                  // lowest temperature attaining the max

  nlohmann::json to_json() const;
};
CoverageReport coverage(const std::vector<MetricRecord>& records, int k,
                        const std::vector<double>& temperature_grid);

struct MatchedRow {
  std::string problem_id;
  double pre = 0.0;
  double post = 0.0;
  double delta = 0.0;
};
struct MatchedReport {
  double temperature = 0.0;
  std::vector<MatchedRow> rows;  // sorted by (pre, problem_id)
  std::vector<std::string> unmatched_pre;
  std::vector<std::string> unmatched_post;

  nlohmann::json to_json() const;
};

// Pairs problems by id between two record sets and reports per-problem
// precision deltas sorted by pre precision; unmatched ids are listed, never
// silently dropped.
MatchedReport matched_problem_analysis(const std::vector<MetricRecord>& records_pre,
                                       const std::vector<MetricRecord>& records_post,
                                       double temperature);

// ---------------------------------------------------------------------------
// Record I/O

// Reads records.jsonl, validating the schema per line and rejecting duplicate
// (problem_id, model_tag, temperature, seed, sample_index) keys.
std::vector<MetricRecord> ingest(const std::filesystem::path& path);

void write_records(const std::filesystem::path& path, const std::vector<MetricRecord>& records);

// ---------------------------------------------------------------------------
// Sweeps

// Draws k samples per (problem, temperature, seed) cell from the model and
// streams scored records to the sink. Sampling is deterministic per
// (seed, problem, temperature) regardless of grid shape or seed set; all of a
// cell's samples for one (problem, temperature) share a cached prefix tree.
void temperature_sweep(const Parameters<float>& params, const EnvTables& tables,
                       const std::vector<ProblemInstance>& problems, const EvalConfig& cfg,
                       const std::string& model_tag,
                       const std::function<void(const MetricRecord&)>& sink);

// Convenience wrapper returning the full record vector.
std::vector<MetricRecord> temperature_sweep(const Parameters<float>& params,
                                            const EnvTables& tables,
                                            const std::vector<ProblemInstance>& problems,
                                            const EvalConfig& cfg, const std::string& model_tag);

// Stable id for the i-th problem of a split, used by sweeps and reports.
std::string problem_id_of(const std::string& split, long index);

// ---------------------------------------------------------------------------
// Report assembly

// {"precision_curves", "pass_at_k", "coverage", "matched"} keyed by model_tag
// (matched pairs pre_tag against post_tag at cfg.matched_temperature).
nlohmann::json build_report(const std::vector<MetricRecord>& records_pre,
                            const std::vector<MetricRecord>& records_post,
                            const std::string& pre_tag, const std::string& post_tag,
                            const EvalConfig& cfg);

}  // namespace statewalk
