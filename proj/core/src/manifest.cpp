#include "mirrams/manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mirrams {

namespace {

std::string digest_to_hex(const unsigned char* d, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[d[i] >> 4];
    out[2 * i + 1] = hex[d[i] & 0xf];
  }
  return out;
}

void check_token(const std::string& s, const char* what) {
  if (s.empty()) throw ManifestError(std::string("manifest: empty ") + what);
  if (s.find('\n') != std::string::npos || s.find(" = ") != std::string::npos)
    throw ManifestError(std::string("manifest: ") + what + " '" + s + "' contains a reserved sequence");
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char d[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  if (EVP_Digest(data, len, d, &dlen, EVP_sha256(), nullptr) != 1)
    throw ManifestError("sha256: digest failed");
  return digest_to_hex(d, dlen);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("sha256: cannot open '" + path + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw ManifestError("sha256: context allocation failed");
  if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw ManifestError("sha256: init failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const std::streamsize got = in.gcount();
    if (got > 0 && EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(got)) != 1) {
      EVP_MD_CTX_free(ctx);
      throw ManifestError("sha256: update failed");
    }
  }
  unsigned char d[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  const int ok = EVP_DigestFinal_ex(ctx, d, &dlen);
  EVP_MD_CTX_free(ctx);
  if (ok != 1) throw ManifestError("sha256: final failed");
  return digest_to_hex(d, dlen);
}

void RunManifest::set(const std::string& key, const std::string& value) {
  for (auto& kv : config) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  config.emplace_back(key, value);
}

const std::string* RunManifest::find(const std::string& key) const {
  for (const auto& kv : config)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

const std::string& RunManifest::at(const std::string& key) const {
  if (const std::string* v = find(key)) return *v;
  throw ManifestError("manifest: missing config key '" + key + "'");
}

void RunManifest::add_input(const std::string& path) { inputs.emplace_back(path, sha256_file(path)); }

void RunManifest::add_output(const std::string& path) { outputs.emplace_back(path, sha256_file(path)); }

std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  check_token(m.command, "command");
  std::ostringstream out;
  out << "[run]\ncommand = " << m.command << "\n";
  out << "\n[config]\n";
  for (const auto& kv : m.config) {
    check_token(kv.first, "config key");
    if (kv.second.find('\n') != std::string::npos)
      throw ManifestError("manifest: config value for '" + kv.first + "' contains a newline");
    out << kv.first << " = " << kv.second << "\n";
  }
  out << "\n[inputs]\n";
  for (const auto& kv : m.inputs) {
    check_token(kv.first, "input path");
    out << kv.first << " = " << kv.second << "\n";
  }
  out << "\n[outputs]\n";
  for (const auto& kv : m.outputs) {
    check_token(kv.first, "output path");
    out << kv.first << " = " << kv.second << "\n";
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ManifestError("manifest: cannot write '" + path + "'");
  f << out.str();
  if (!f) throw ManifestError("manifest: write to '" + path + "' failed");
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ManifestError("manifest: cannot open '" + path + "'");
  RunManifest m;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      if (section != "run" && section != "config" && section != "inputs" && section != "outputs")
        throw ManifestError("manifest: unknown section '" + section + "' at line " + std::to_string(lineno));
      continue;
    }
    const auto sep = line.find(" = ");
    if (sep == std::string::npos)
      throw ManifestError("manifest: malformed line " + std::to_string(lineno) + ": '" + line + "'");
    const std::string key = line.substr(0, sep);
    const std::string value = line.substr(sep + 3);
    if (section == "run") {
      if (key != "command")
        throw ManifestError("manifest: unexpected key '" + key + "' in [run] at line " + std::to_string(lineno));
      m.command = value;
    } else if (section == "config") {
      m.config.emplace_back(key, value);
    } else if (section == "inputs") {
      m.inputs.emplace_back(key, value);
    } else if (section == "outputs") {
      m.outputs.emplace_back(key, value);
    } else {
      throw ManifestError("manifest: content before any section at line " + std::to_string(lineno));
    }
  }
  if (m.command.empty()) throw ManifestError("manifest: missing [run] command in '" + path + "'");
  return m;
}

}  // namespace mirrams
