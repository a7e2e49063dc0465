#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocn/matrix.hpp"

namespace ocn {

using NamedMatrices = std::vector<std::pair<std::string, Matrix>>;

inline void write_named_matrices(std::ostream& os, const NamedMatrices& mats) {
  os << mats.size() << "\n";
  for (const auto& [name, m] : mats) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("write_named_matrices: bad name '" + name + "'");
    os << name << "\n";
    write_matrix(os, m);
  }
}

inline NamedMatrices read_named_matrices(std::istream& is) {
  std::size_t count = 0;
  if (!(is >> count)) throw std::runtime_error("read_named_matrices: missing count");
  NamedMatrices mats;
  mats.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!(is >> name))
      throw std::runtime_error("read_named_matrices: missing name for section " +
                               std::to_string(i));
    mats.emplace_back(name, read_matrix(is));
  }
  return mats;
}

inline void save_named_matrices(const std::string& path, const NamedMatrices& mats) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_named_matrices(f, mats);
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline NamedMatrices load_named_matrices(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_named_matrices(f);
}

inline const Matrix& find_matrix(const NamedMatrices& mats, const std::string& name) {
  for (const auto& [n, m] : mats)
    if (n == name) return m;
  throw std::runtime_error("matrix '" + name + "' not found in container");
}

/// Flat key=value text config. Lines starting with '#' and blank lines are
/// skipped; keys are single tokens, values run to end of line.
class KvFile {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, double value) {
    std::ostringstream ss;
    ss.precision(17);
    ss << value;
    set(key, ss.str());
  }
  void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    throw std::runtime_error("config key '" + key + "' missing");
  }
  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "' is not a number: '" + s + "'");
    }
  }
  std::size_t get_count(const std::string& key) const {
    const double v = get_double(key);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw std::runtime_error("config key '" + key + "' is not a count");
    return static_cast<std::size_t>(v);
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [k, v] : entries_) f << k << "=" << v << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
  }
  static KvFile load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    KvFile kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected key=value, got '" + line + "'");
      kv.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace ocn
