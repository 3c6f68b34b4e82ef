#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mirrams {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_file(const std::string& path);

// Record of one tool invocation: the resolved option values (every seed
// included), content hashes of the files read, and the files written. The
// config section is sufficient to re-run the command and reproduce each
// output byte for byte.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256

  void set(const std::string& key, const std::string& value);
  const std::string* find(const std::string& key) const;
  const std::string& at(const std::string& key) const;  // throws ManifestError when absent
  void add_input(const std::string& path);               // hashes the file now
  void add_output(const std::string& path);              // hashes the file now
};

// round-trippable decimal form of a double (17 significant digits)
std::string format_exact(double v);

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

}  // namespace mirrams
