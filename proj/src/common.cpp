#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <numbers>
#include <sstream>

#include "wagemix/config.hpp"
#include "wagemix/digest.hpp"
#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/table.hpp"

namespace wagemix {

// ---------------------------------------------------------------------------
// numeric

double normal_logpdf(double x, double mean, double sd) {
  static const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double z = (x - mean) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}

double log_sum_exp(std::span<const double> values) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : values) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return kNaN;
  CompensatedSum s;
  for (double x : xs) s += x;
  return s.value() / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) { return covariance(xs, xs); }

double covariance(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || xs.size() != ys.size()) return kNaN;
  const double mx = mean(xs);
  const double my = mean(ys);
  CompensatedSum s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (xs[i] - mx) * (ys[i] - my);
  return s.value() / static_cast<double>(xs.size());
}

std::mt19937_64 substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto p : path) push(p);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
  // FNV-1a over the stage name, folded with the master seed.
  std::uint64_t h = 1469598103934665603ull;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  auto gen = substream(master, {h});
  return gen();
}

// ---------------------------------------------------------------------------
// config

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

}  // namespace

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string current;
  for (char c : value) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!current.empty()) out.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    }
    if (cfg.entries_.count(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(source_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const { return raw(key); }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key) const {
  return parse_number<long long>(raw(key), key);
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key) const {
  return parse_number<std::uint64_t>(raw(key), key);
}

double KeyValueConfig::get_double(const std::string& key) const {
  return parse_number<double>(raw(key), key);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& tok : split_list(raw(key))) out.push_back(parse_number<double>(tok, key));
  return out;
}

std::vector<long long> KeyValueConfig::get_ints(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& tok : split_list(raw(key))) out.push_back(parse_number<long long>(tok, key));
  return out;
}

std::vector<std::string> KeyValueConfig::get_strings(const std::string& key) const {
  return split_list(raw(key));
}

std::string KeyValueConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// table

void Table::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns.size()) {
    throw std::logic_error("table '" + schema + "': row width " + std::to_string(cells.size()) +
                           " does not match " + std::to_string(columns.size()) + " columns");
  }
  rows.push_back(std::move(cells));
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  (void)ec;
  return std::string(buf.data(), ptr);
}

std::string format_number(long long x) { return std::to_string(x); }

void write_table(std::ostream& out, const Table& table, char delimiter) {
  out << "#schema=" << table.schema << " version=" << table.version << '\n';
  auto write_cells = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << delimiter;
      out << cells[i];
    }
    out << '\n';
  };
  write_cells(table.columns);
  for (const auto& row : table.rows) write_cells(row);
}

Table read_table(std::istream& in, char delimiter) {
  Table table;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#schema=", 0) != 0) {
    throw DataError("table: missing '#schema=' header line");
  }
  {
    std::istringstream head(line.substr(8));
    std::string version_token;
    head >> table.schema >> version_token;
    if (version_token.rfind("version=", 0) != 0) throw DataError("table: missing version");
    table.version = std::stoi(version_token.substr(8));
  }
  auto split = [&](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : l) {
      if (c == delimiter) {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell.push_back(c);
      }
    }
    cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) throw DataError("table '" + table.schema + "': missing header row");
  table.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.columns.size()) {
      throw DataError("table '" + table.schema + "': ragged row");
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

// ---------------------------------------------------------------------------
// digest

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for hashing");
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

}  // namespace wagemix
