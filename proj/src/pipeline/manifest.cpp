#include "maeloc/pipeline/manifest.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <memory>
#include <vector>

#include "maeloc/error.hpp"

namespace maeloc::pipeline {

namespace fs = std::filesystem;

namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 init failed");
  }
  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("SHA-256 update failed");
  }
  void update_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw Error("SHA-256 final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < len; ++k) {
      out += digits[md[k] >> 4];
      out += digits[md[k] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_file(const fs::path& path) {
  Digest d;
  d.update_file(path);
  return d.hex();
}

std::string sha256_hex(const std::string& bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string dataset_fingerprint(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".wav" || e.path().filename() == "index.txt"))
      files.push_back(e.path());
  if (files.empty()) throw IoError("no dataset files in " + dir.string());
  std::sort(files.begin(), files.end());
  Digest d;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    d.update(name.data(), name.size() + 1);
    d.update_file(f);
  }
  return d.hex();
}

std::string write_manifest(const fs::path& run_dir, const Manifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seeds"] = m.seeds;
  j["inputs"] = m.inputs;
  nlohmann::json art = nlohmann::json::object();
  for (const auto& a : m.artifacts) art[a] = sha256_file(run_dir / a);
  j["artifacts"] = art;
  const std::string text = j.dump(2) + "\n";
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (run_dir / "manifest.json").string());
  out << text;
  return text;
}

}  // namespace maeloc::pipeline
