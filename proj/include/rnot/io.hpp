#pragma once

// Artifact plumbing: content hashes, atomic file writes, checkpoints and run
// manifests.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnot/ctransform.hpp"
#include "rnot/rcpm.hpp"

namespace rnot {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SHA-1 of "blob <size>\0<bytes>", i.e. the hash git assigns to the content.
std::string git_blob_sha1(const std::string& bytes);
std::string file_sha1(const std::string& path);

std::string read_file(const std::string& path);
/// Writes `<path>.partial` and renames it over `path` once complete.
void atomic_write(const std::string& path, const std::string& bytes);

/// A saved model. RNOT checkpoints reference a landmark file stored next to
/// them; RCPM checkpoints are self-contained.
struct Checkpoint {
  std::string kind;  // "rnot" or "rcpm"
  std::optional<PotentialModel> rnot;
  std::optional<RcpmModel> rcpm;

  const Manifold& manifold() const;
};

/// Writes `<dir>/checkpoint.json` (and `<dir>/landmarks.csv`); returns the
/// checkpoint path.
std::string save_checkpoint(const std::string& dir, const PotentialModel& model);
std::string save_checkpoint(const std::string& dir, const RcpmModel& model);
Checkpoint load_checkpoint(const std::string& path);

/// Records what a command read and wrote, so the run can be repeated and
/// its outputs compared by hash.
class Manifest {
 public:
  Manifest(std::string command, nlohmann::json config);
  void add_input(const std::string& path);
  /// Hashes the file as it is now on disk.
  void add_output(const std::string& path);
  void add_timing(const std::string& name, double seconds);
  void set(const std::string& key, nlohmann::json value);
  const nlohmann::json& json() const { return j_; }
  void write(const std::string& path) const;

 private:
  nlohmann::json j_;
};

/// Thread count: the flag if given, else RNOT_THREADS, else hardware concurrency.
int resolve_threads(std::optional<int> flag);

}  // namespace rnot
