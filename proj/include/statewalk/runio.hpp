#pragma once
// Run-directory plumbing: content hashes, atomic file writes, checkpoints,
// run manifests, and the metrics.jsonl stream.
//
// A run directory looks like
//   runs/<run_id>/manifest.json     resolved config + input hashes + status
//   runs/<run_id>/metrics.jsonl     one JSON object per line, append-only
//   runs/<run_id>/checkpoints/      step-NNNN/ checkpoint directories
//   runs/<run_id>/reports/          report.json, tree HTML, figures
//
// A checkpoint directory holds manifest.json (config, tensor names, shapes,
// byte offsets, seed, step) plus params.bin — every tensor concatenated in
// canonical order as little-endian float32 — and optionally adam.bin with the
// optimizer moments for bitwise resume.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "statewalk/errors.hpp"
#include "statewalk/model.hpp"

namespace statewalk {

inline constexpr const char* kToolVersion = "1.0.0";

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

// --- hashing & atomic files -------------------------------------------------

std::string sha256_bytes(const void* data, std::size_t n);
std::string sha256_file(const std::filesystem::path& path);  // IoFailure if unreadable

// Writes via a temp file in the same directory, then renames into place.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);  // IoFailure

std::string utc_timestamp();  // e.g. "2026-08-14T12:34:56Z"

// --- checkpoints -------------------------------------------------------------

struct AdamMoments {
  Parameters<float> m;
  Parameters<float> v;
  long t = 0;  // completed optimizer steps
};

struct LoadedCheckpoint {
  Parameters<float> params;
  std::uint64_t seed = 0;
  long step = 0;
  std::optional<AdamMoments> optimizer;
};

void save_checkpoint(const std::filesystem::path& dir, const Parameters<float>& params,
                     std::uint64_t seed, long step, const AdamMoments* optimizer = nullptr);

// Validates every tensor shape against the manifest's config; throws
// CheckpointIoFailure on missing files, bad sizes, or shape drift.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// --- run directories ----------------------------------------------------------

struct RunDir {
  std::filesystem::path root;

  std::filesystem::path manifest_path() const { return root / "manifest.json"; }
  std::filesystem::path metrics_path() const { return root / "metrics.jsonl"; }
  std::filesystem::path checkpoints_dir() const { return root / "checkpoints"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path checkpoint_dir(long step) const;

  void ensure() const;  // creates the directory tree
};

// Written atomically at run start (status "running") and finalized at the end
// ("complete" or "failed"); the resolved config inside is the single source of
// truth for what the run did.
struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::json config;
  nlohmann::json input_hashes = nlohmann::json::object();  // artifact -> sha256
  std::vector<std::string> outputs;                        // run-relative paths
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;
  std::string status = "running";
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);

  void write(const RunDir& dir) const;
  void finalize(const RunDir& dir, const std::string& final_status);
};

// Append-only JSONL stream, flushed per row so partial runs stay inspectable.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const nlohmann::json& row);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace statewalk
