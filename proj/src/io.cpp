#include "rnot/io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

namespace rnot {

namespace fs = std::filesystem;

std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || !EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) ||
      !EVP_DigestUpdate(ctx.get(), header.data(), header.size()) ||
      !EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) ||
      !EVP_DigestFinal_ex(ctx.get(), digest, &len)) {
    throw IoError("SHA-1 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_sha1(const std::string& path) { return git_blob_sha1(read_file(path)); }

void atomic_write(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string partial = path + ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + partial + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + partial + "'");
  }
  std::error_code ec;
  fs::rename(partial, target, ec);
  if (ec) throw IoError("cannot rename '" + partial + "': " + ec.message());
}

const Manifold& Checkpoint::manifold() const {
  if (rnot) return rnot->manifold();
  if (rcpm) return rcpm->manifold();
  throw IoError("empty checkpoint");
}

std::string save_checkpoint(const std::string& dir, const PotentialModel& model) {
  std::ostringstream lm;
  write_landmarks(lm, model.landmarks());
  const std::string lm_bytes = lm.str();
  atomic_write((fs::path(dir) / "landmarks.csv").string(), lm_bytes);
  nlohmann::json j = {{"kind", "rnot"},
                      {"network", mlp_to_json(model.net())},
                      {"landmarks", {{"file", "landmarks.csv"}, {"sha1", git_blob_sha1(lm_bytes)}}}};
  const std::string path = (fs::path(dir) / "checkpoint.json").string();
  atomic_write(path, j.dump(1) + "\n");
  return path;
}

std::string save_checkpoint(const std::string& dir, const RcpmModel& model) {
  nlohmann::json j = {{"kind", "rcpm"}, {"model", rcpm_to_json(model)}};
  const std::string path = (fs::path(dir) / "checkpoint.json").string();
  atomic_write(path, j.dump(1) + "\n");
  return path;
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("checkpoint '" + path + "' does not exist");
  Checkpoint c;
  try {
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    c.kind = j.at("kind").get<std::string>();
    if (c.kind == "rnot") {
      const auto& ref = j.at("landmarks");
      fs::path lm_path = ref.at("file").get<std::string>();
      if (lm_path.is_relative()) lm_path = fs::path(path).parent_path() / lm_path;
      const std::string bytes = read_file(lm_path.string());
      if (ref.contains("sha1") && ref.at("sha1").get<std::string>() != git_blob_sha1(bytes)) {
        throw IoError("landmark file '" + lm_path.string() + "' does not match its recorded hash");
      }
      std::istringstream is(bytes);
      c.rnot.emplace(read_landmarks(is), mlp_from_json(j.at("network")));
    } else if (c.kind == "rcpm") {
      c.rcpm.emplace(rcpm_from_json(j.at("model")));
    } else {
      throw IoError("unknown checkpoint kind '" + c.kind + "'");
    }
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint '" + path + "': " + e.what());
  }
  return c;
}

Manifest::Manifest(std::string command, nlohmann::json config) {
  j_ = {{"manifest_version", kManifestVersion},
        {"command", std::move(command)},
        {"versions", {{"rnot", kLibraryVersion}, {"config_schema", config.value("schema_version", 0)}}},
        {"config", std::move(config)},
        {"inputs", nlohmann::json::array()},
        {"outputs", nlohmann::json::array()},
        {"timings", nlohmann::json::object()}};
}

void Manifest::add_input(const std::string& path) {
  j_["inputs"].push_back({{"path", path}, {"sha1", file_sha1(path)}});
}

void Manifest::add_output(const std::string& path) {
  j_["outputs"].push_back({{"path", path}, {"sha1", file_sha1(path)}});
}

void Manifest::add_timing(const std::string& name, double seconds) { j_["timings"][name] = seconds; }

void Manifest::set(const std::string& key, nlohmann::json value) { j_[key] = std::move(value); }

void Manifest::write(const std::string& path) const { atomic_write(path, j_.dump(1) + "\n"); }

int resolve_threads(std::optional<int> flag) {
  if (flag && *flag > 0) return *flag;
  if (const char* env = std::getenv("RNOT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace rnot
