#include "wagemix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"
#include "wagemix/table.hpp"

namespace wagemix::synth {

using json = nlohmann::json;
using Matrix = std::vector<std::vector<double>>;

namespace {

constexpr double kSimplexTol = 1e-12;

void check_simplex(const std::vector<double>& v, const std::string& field) {
  CompensatedSum s;
  for (double x : v) {
    if (!(x >= 0.0)) throw ConfigError(field + ": negative or non-finite probability");
    s += x;
  }
  if (std::abs(s.value() - 1.0) > kSimplexTol) {
    throw ConfigError(field + ": probabilities sum to " + format_number(s.value()) +
                      ", expected 1");
  }
}

}  // namespace

void MarketSpec::validate() const {
  if (K < 1) throw ConfigError("K must be >= 1");
  if (L < 1) throw ConfigError("L must be >= 1");
  if (static_cast<int>(firms_per_class.size()) != K) {
    throw ConfigError("firms_per_class must have K entries");
  }
  for (int n : firms_per_class) {
    if (n < 0) throw ConfigError("firms_per_class: negative firm count");
  }
  if (!(size_log_sd >= 0.0) || !std::isfinite(size_log_mean)) {
    throw ConfigError("firm_size: invalid log-normal parameters");
  }
  if (!(female_share > 0.0 && female_share < 1.0)) {
    throw ConfigError("female_share must lie in (0, 1)");
  }
  if (!(mover_share > 0.0 && mover_share < 1.0)) {
    throw ConfigError("mover_share must lie in (0, 1)");
  }
  for (int g = 0; g < kGenders; ++g) {
    const std::string gs = to_string(gender_at(g));
    if (static_cast<int>(type_marginals[g].size()) != L) {
      throw ConfigError("type_marginals." + gs + " must have L entries");
    }
    check_simplex(type_marginals[g], "type_marginals." + gs);
    if (static_cast<int>(class_attachment[g].size()) != L) {
      throw ConfigError("class_attachment." + gs + " must have L rows");
    }
    for (int l = 0; l < L; ++l) {
      if (static_cast<int>(class_attachment[g][l].size()) != K) {
        throw ConfigError("class_attachment." + gs + " rows must have K entries");
      }
      check_simplex(class_attachment[g][l],
                    "class_attachment." + gs + " row " + std::to_string(l + 1));
    }
    if (static_cast<int>(gender_offset[g].size()) != K) {
      throw ConfigError("offset." + gs + " must have K rows");
    }
    for (const auto& row : gender_offset[g]) {
      if (static_cast<int>(row.size()) != L) throw ConfigError("offset." + gs + " rows need L");
      for (double x : row) {
        if (!std::isfinite(x)) throw ConfigError("offset." + gs + ": non-finite value");
      }
    }
  }
  if (static_cast<int>(transition_kernel.size()) != L) {
    throw ConfigError("transition_kernel must have L blocks");
  }
  for (int l = 0; l < L; ++l) {
    if (static_cast<int>(transition_kernel[l].size()) != K) {
      throw ConfigError("transition_kernel blocks must be K x K");
    }
    for (int k = 0; k < K; ++k) {
      if (static_cast<int>(transition_kernel[l][k].size()) != K) {
        throw ConfigError("transition_kernel blocks must be K x K");
      }
      check_simplex(transition_kernel[l][k], "transition_kernel type " + std::to_string(l + 1) +
                                                 " row " + std::to_string(k + 1));
    }
  }
  for (int t = 0; t < 2; ++t) {
    const std::string ts = "p" + std::to_string(t + 1);
    if (static_cast<int>(mu[t].size()) != K || static_cast<int>(sigma[t].size()) != K) {
      throw ConfigError("mu." + ts + " and sigma." + ts + " must have K rows");
    }
    for (int k = 0; k < K; ++k) {
      if (static_cast<int>(mu[t][k].size()) != L || static_cast<int>(sigma[t][k].size()) != L) {
        throw ConfigError("mu." + ts + " and sigma." + ts + " rows must have L entries");
      }
      for (int l = 0; l < L; ++l) {
        if (!std::isfinite(mu[t][k][l])) throw ConfigError("mu." + ts + ": non-finite value");
        if (!(sigma[t][k][l] >= kSigmaFloor)) {
          throw ConfigError("sigma." + ts + ": value below the floor 1e-4");
        }
      }
    }
  }

  // Every class that receives workers needs firms.
  for (int k = 0; k < K; ++k) {
    double mass = 0.0;
    for (int g = 0; g < kGenders; ++g) {
      for (int l = 0; l < L; ++l) mass += type_marginals[g][l] * class_attachment[g][l][k];
    }
    if (mass > 0.0 && firms_per_class[k] == 0) {
      throw ConfigError("class " + std::to_string(k + 1) +
                        " has positive attachment mass but no firms");
    }
    if (firms_per_class[k] > 0 && mass == 0.0) {
      throw ConfigError("class " + std::to_string(k + 1) + " has firms but no attachment mass");
    }
  }
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < K; ++k) {
      if (firms_per_class[k] == 0) continue;
      for (int k2 = 0; k2 < K; ++k2) {
        const double p = transition_kernel[l][k][k2];
        if (p <= 0.0) continue;
        if (firms_per_class[k2] == 0 || (k2 == k && firms_per_class[k] < 2)) {
          throw ConfigError("transition_kernel moves workers into class " +
                            std::to_string(k2 + 1) + " without another firm to move to");
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// config

namespace {

class SpecReader {
 public:
  SpecReader(const KeyValueConfig& cfg, std::string prefix)
      : cfg_(cfg), prefix_(std::move(prefix)) {}

  bool has(const std::string& key) const { return cfg_.has(prefix_ + key); }
  std::string key(const std::string& k) const { return prefix_ + k; }

  std::vector<double> doubles(const std::string& k) const { return cfg_.get_doubles(key(k)); }

  // rows x cols, from a full row-major list or a single broadcast value.
  Matrix matrix(const std::string& k, int rows, int cols) const {
    const auto v = doubles(k);
    Matrix m(rows, std::vector<double>(cols));
    if (v.size() == 1) {
      for (auto& row : m) std::fill(row.begin(), row.end(), v[0]);
    } else if (static_cast<int>(v.size()) == rows * cols) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m[r][c] = v[r * cols + c];
      }
    } else {
      throw ConfigError(key(k) + ": expected 1 or " + std::to_string(rows * cols) +
                        " values, got " + std::to_string(v.size()));
    }
    return m;
  }

  bool is_uniform(const std::string& k) const {
    return has(k) && cfg_.get_string(key(k)) == "uniform";
  }

  const KeyValueConfig& cfg() const { return cfg_; }

 private:
  const KeyValueConfig& cfg_;
  std::string prefix_;
};

std::vector<double> uniform_row(int n) { return std::vector<double>(n, 1.0 / n); }

}  // namespace

MarketSpec spec_from_config(const KeyValueConfig& cfg, const std::string& prefix) {
  SpecReader r(cfg, prefix);
  MarketSpec s;
  s.K = static_cast<int>(cfg.get_int(r.key("K")));
  s.L = static_cast<int>(cfg.get_int(r.key("L")));
  if (s.K < 1 || s.L < 1) throw ConfigError(r.key("K") + " and " + r.key("L") + " must be >= 1");
  const int K = s.K;
  const int L = s.L;

  {
    const auto v = cfg.get_ints(r.key("firms_per_class"));
    if (v.size() == 1) {
      s.firms_per_class.assign(K, static_cast<int>(v[0]));
    } else {
      for (auto x : v) s.firms_per_class.push_back(static_cast<int>(x));
    }
  }
  s.size_log_mean = cfg.get_double(r.key("firm_size.log_mean"), s.size_log_mean);
  s.size_log_sd = cfg.get_double(r.key("firm_size.log_sd"), s.size_log_sd);
  s.female_share = cfg.get_double(r.key("female_share"), s.female_share);
  s.mover_share = cfg.get_double(r.key("mover_share"), s.mover_share);
  s.year1 = static_cast<int>(cfg.get_int(r.key("year1"), s.year1));
  s.seed = cfg.get_uint(r.key("seed"));

  for (int g = 0; g < kGenders; ++g) {
    const std::string gs = to_string(gender_at(g));
    const std::string tm = "type_marginals." + gs;
    if (!r.has(tm) || r.is_uniform(tm)) {
      s.type_marginals[g] = uniform_row(L);
    } else {
      s.type_marginals[g] = r.doubles(tm);
    }
    const std::string ca = "class_attachment." + gs;
    if (!r.has(ca) || r.is_uniform(ca)) {
      s.class_attachment[g].assign(L, uniform_row(K));
    } else {
      s.class_attachment[g] = r.matrix(ca, L, K);
    }
    const std::string off = "offset." + gs;
    s.gender_offset[g] = r.has(off) ? r.matrix(off, K, L) : Matrix(K, std::vector<double>(L, 0.0));
  }

  if (!r.has("transition_kernel") || r.is_uniform("transition_kernel")) {
    s.transition_kernel.assign(L, Matrix(K, uniform_row(K)));
  } else {
    const auto v = r.doubles("transition_kernel");
    if (static_cast<int>(v.size()) != L * K * K) {
      throw ConfigError(r.key("transition_kernel") + ": expected L*K*K values");
    }
    s.transition_kernel.assign(L, Matrix(K, std::vector<double>(K)));
    for (int l = 0; l < L; ++l) {
      for (int k = 0; k < K; ++k) {
        for (int k2 = 0; k2 < K; ++k2) s.transition_kernel[l][k][k2] = v[(l * K + k) * K + k2];
      }
    }
  }

  // Means: explicit per-period grids, or class + type effects with an
  // optional interaction and period-2 shift.
  if (r.has("mu.p1")) {
    s.mu[0] = r.matrix("mu.p1", K, L);
    s.mu[1] = r.has("mu.p2") ? r.matrix("mu.p2", K, L) : s.mu[0];
  } else {
    const auto b = r.doubles("mu.class");
    const auto a = r.doubles("mu.type");
    if (static_cast<int>(b.size()) != K || static_cast<int>(a.size()) != L) {
      throw ConfigError(r.key("mu.class") + "/" + r.key("mu.type") + ": need K and L values");
    }
    const double inter = cfg.get_double(r.key("mu.interaction"), 0.0);
    const double growth = cfg.get_double(r.key("mu.growth"), 0.0);
    const double kc = 0.5 * (K - 1);
    const double lc = 0.5 * (L - 1);
    for (int t = 0; t < 2; ++t) {
      s.mu[t].assign(K, std::vector<double>(L));
      for (int k = 0; k < K; ++k) {
        for (int l = 0; l < L; ++l) {
          s.mu[t][k][l] = b[k] + a[l] + inter * (k - kc) * (l - lc) + (t == 1 ? growth : 0.0);
        }
      }
    }
  }
  s.sigma[0] = r.matrix("sigma.p1", K, L);
  s.sigma[1] = r.has("sigma.p2") ? r.matrix("sigma.p2", K, L) : s.sigma[0];

  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// generation

std::vector<std::vector<double>> cell_probabilities(const MarketSpec& s) {
  const double pg[2] = {s.female_share, 1.0 - s.female_share};
  std::vector<std::vector<double>> out(s.K, std::vector<double>(2 * s.L, 0.0));
  for (int k = 0; k < s.K; ++k) {
    CompensatedSum total;
    for (int g = 0; g < kGenders; ++g) {
      for (int l = 0; l < s.L; ++l) {
        const double m = pg[g] * s.type_marginals[g][l] * s.class_attachment[g][l][k];
        out[k][g * s.L + l] = m;
        total += m;
      }
    }
    if (total.value() > 0) {
      for (auto& x : out[k]) x /= total.value();
    }
  }
  return out;
}

namespace {

double unit(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

int draw_index(std::mt19937_64& gen, const std::vector<double>& probs) {
  const double u = unit(gen);
  double acc = 0.0;
  int last = 0;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

int draw_int(std::mt19937_64& gen, int lo, int hi) {  // inclusive
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(gen() % span);
}

double draw_normal(std::mt19937_64& gen, double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  return d(gen);
}

std::string padded(char prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

struct FirmPlan {
  int k = 0;
  int size = 0;
  panel::Sector sector = panel::Sector::Services;
};

struct DraftWorker {
  int gender = 0;
  int type = 0;
  int firm2 = 0;
  panel::Observation first;
  panel::Observation second;
};

}  // namespace

Market generate_market(const MarketSpec& spec, unsigned threads) {
  spec.validate();
  const int K = spec.K;
  const int L = spec.L;

  std::vector<FirmPlan> plans;
  std::vector<std::vector<int>> class_firms(K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < spec.firms_per_class[k]; ++i) {
      class_firms[k].push_back(static_cast<int>(plans.size()));
      plans.push_back({k, 0, panel::Sector::Services});
    }
  }
  const std::size_t nfirms = plans.size();
  if (nfirms == 0) throw ConfigError("market has no firms");

  for (std::size_t j = 0; j < nfirms; ++j) {
    auto gen = substream(spec.seed, {0, j});
    std::normal_distribution<double> size_law(spec.size_log_mean, spec.size_log_sd);
    const double x = std::exp(size_law(gen));
    plans[j].size = std::max(2, static_cast<int>(std::ceil(x)));
    plans[j].sector = static_cast<panel::Sector>(draw_int(gen, 0, panel::kSectors - 1));
  }

  const auto cell_p = cell_probabilities(spec);
  std::vector<FirmId> firm_ids;
  firm_ids.reserve(nfirms);
  for (std::size_t j = 0; j < nfirms; ++j) firm_ids.emplace_back(padded('f', j + 1, 6));

  std::vector<std::vector<DraftWorker>> drafts(nfirms);
  parallel_for(nfirms, threads, [&](std::size_t j) {
    auto gen = substream(spec.seed, {1, j});
    const FirmPlan& plan = plans[j];
    const int k = plan.k;
    auto& out = drafts[j];
    out.reserve(plan.size);
    for (int i = 0; i < plan.size; ++i) {
      DraftWorker w;
      const int cell = draw_index(gen, cell_p[k]);
      w.gender = cell / L;
      w.type = cell % L;
      const int l = w.type;
      const bool mover = unit(gen) < spec.mover_share;
      int k2 = k;
      int j2 = static_cast<int>(j);
      if (mover) {
        k2 = draw_index(gen, spec.transition_kernel[l][k]);
        const auto& pool = class_firms[k2];
        if (k2 == k) {
          // uniform over the other firms of the same class
          int pick = draw_int(gen, 0, static_cast<int>(pool.size()) - 2);
          if (pool[pick] == static_cast<int>(j)) pick = static_cast<int>(pool.size()) - 1;
          j2 = pool[pick];
        } else {
          j2 = pool[draw_int(gen, 0, static_cast<int>(pool.size()) - 1)];
        }
      }
      w.firm2 = j2;

      const double lscale = L > 1 ? static_cast<double>(l) / (L - 1) : 0.5;
      const std::vector<double> edu_p = {0.3 * (1.0 - lscale), 0.0, 0.15 + 0.5 * lscale};
      std::vector<double> edu = edu_p;
      edu[1] = 1.0 - edu[0] - edu[2];

      auto& a = w.first;
      a.year = spec.year1;
      a.gender = gender_at(w.gender);
      a.age = draw_int(gen, 20, 58);
      a.education = static_cast<panel::Education>(draw_index(gen, edu));
      a.occupation = draw_int(gen, 0, 4);
      a.sector = plan.sector;
      a.tenure = static_cast<double>(draw_int(gen, 0, 10));
      a.hours = 40.0;
      a.contract_span = 365;
      a.private_sector = true;
      a.log_wage = draw_normal(gen, spec.mu[0][k][l] + spec.gender_offset[w.gender][k][l],
                               spec.sigma[0][k][l]);

      auto& b = w.second;
      b = a;
      b.year = spec.year1 + 2;
      b.age = a.age + 2;
      b.sector = plans[j2].sector;
      b.tenure = mover ? 0.0 : a.tenure + 2.0;
      if (mover) b.occupation = draw_int(gen, 0, 4);
      b.log_wage = draw_normal(gen, spec.mu[1][k2][l] + spec.gender_offset[w.gender][k2][l],
                               spec.sigma[1][k2][l]);
      out.push_back(std::move(w));
    }
  });

  Market market;
  market.truth.spec = spec;
  market.truth.firms = firm_ids;
  for (std::size_t j = 0; j < nfirms; ++j) market.truth.firm_class[firm_ids[j]] = plans[j].k;
  auto& bp = market.panel;
  bp.year1 = spec.year1;
  bp.year2 = spec.year1 + 2;
  std::size_t total = 0;
  for (const auto& d : drafts) total += d.size();
  bp.rows.reserve(total);
  std::size_t next_id = 1;
  for (std::size_t j = 0; j < nfirms; ++j) {
    for (auto& w : drafts[j]) {
      const WorkerId id(padded('w', next_id++, 8));
      w.first.worker_id = id;
      w.second.worker_id = id;
      w.first.firm_id = firm_ids[j];
      w.second.firm_id = firm_ids[w.firm2];
      market.truth.worker_type[id] = w.type;
      bp.rows.push_back({std::move(w.first), std::move(w.second), w.firm2 != static_cast<int>(j)});
    }
  }
  return market;
}

MatchMoments expected_moments(const MarketSpec& s) {
  s.validate();
  const int K = s.K;
  const int L = s.L;
  const auto cell_p = cell_probabilities(s);
  CompensatedSum firms_total;
  for (int n : s.firms_per_class) firms_total += n;

  // m1[g][k][l]: period-1 mass
  std::vector<Matrix> m1(kGenders, Matrix(K, std::vector<double>(L, 0.0)));
  for (int k = 0; k < K; ++k) {
    const double pk = s.firms_per_class[k] / firms_total.value();
    for (int g = 0; g < kGenders; ++g) {
      for (int l = 0; l < L; ++l) m1[g][k][l] = pk * cell_p[k][g * L + l];
    }
  }
  MatchMoments out(K, L);
  for (int g = 0; g < kGenders; ++g) {
    for (int k2 = 0; k2 < K; ++k2) {
      for (int l = 0; l < L; ++l) {
        double inflow = 0.0;
        for (int k = 0; k < K; ++k) inflow += m1[g][k][l] * s.transition_kernel[l][k][k2];
        const double a = m1[g][k2][l];
        const double b = (1.0 - s.mover_share) * a + s.mover_share * inflow;
        auto& c = out.at(g, k2, l);
        c.count = a + b;
        if (c.count <= 0) continue;
        const double mu1 = s.mu[0][k2][l] + s.gender_offset[g][k2][l];
        const double mu2 = s.mu[1][k2][l] + s.gender_offset[g][k2][l];
        const double v1 = s.sigma[0][k2][l] * s.sigma[0][k2][l];
        const double v2 = s.sigma[1][k2][l] * s.sigma[1][k2][l];
        c.mean = (a * mu1 + b * mu2) / c.count;
        c.var = (a * (v1 + (mu1 - c.mean) * (mu1 - c.mean)) +
                 b * (v2 + (mu2 - c.mean) * (mu2 - c.mean))) /
                c.count;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json spec_json(const MarketSpec& s) {
  json j;
  j["K"] = s.K;
  j["L"] = s.L;
  j["firms_per_class"] = s.firms_per_class;
  j["firm_size"] = {{"log_mean", s.size_log_mean}, {"log_sd", s.size_log_sd}};
  j["female_share"] = s.female_share;
  j["mover_share"] = s.mover_share;
  j["type_marginals"] = {{"F", s.type_marginals[0]}, {"M", s.type_marginals[1]}};
  j["class_attachment"] = {{"F", s.class_attachment[0]}, {"M", s.class_attachment[1]}};
  j["transition_kernel"] = s.transition_kernel;
  j["mu"] = {{"p1", s.mu[0]}, {"p2", s.mu[1]}};
  j["sigma"] = {{"p1", s.sigma[0]}, {"p2", s.sigma[1]}};
  j["offset"] = {{"F", s.gender_offset[0]}, {"M", s.gender_offset[1]}};
  j["year1"] = s.year1;
  j["seed"] = s.seed;
  return j;
}

MarketSpec spec_from(const json& j) {
  MarketSpec s;
  s.K = j.at("K").get<int>();
  s.L = j.at("L").get<int>();
  s.firms_per_class = j.at("firms_per_class").get<std::vector<int>>();
  s.size_log_mean = j.at("firm_size").at("log_mean").get<double>();
  s.size_log_sd = j.at("firm_size").at("log_sd").get<double>();
  s.female_share = j.at("female_share").get<double>();
  s.mover_share = j.at("mover_share").get<double>();
  for (int g = 0; g < kGenders; ++g) {
    const char* gs = to_string(gender_at(g));
    s.type_marginals[g] = j.at("type_marginals").at(gs).get<std::vector<double>>();
    s.class_attachment[g] = j.at("class_attachment").at(gs).get<Matrix>();
    s.gender_offset[g] = j.at("offset").at(gs).get<Matrix>();
  }
  s.transition_kernel = j.at("transition_kernel").get<std::vector<Matrix>>();
  s.mu[0] = j.at("mu").at("p1").get<Matrix>();
  s.mu[1] = j.at("mu").at("p2").get<Matrix>();
  s.sigma[0] = j.at("sigma").at("p1").get<Matrix>();
  s.sigma[1] = j.at("sigma").at("p2").get<Matrix>();
  s.year1 = j.at("year1").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

std::string truth_json(const GroundTruth& t) {
  json j;
  j["version"] = 1;
  j["spec"] = spec_json(t.spec);
  // 1-based labels in the file.
  json firms = json::object();
  for (const auto& [id, k] : t.firm_class) firms[id.value] = k + 1;
  json workers = json::object();
  for (const auto& [id, l] : t.worker_type) workers[id.value] = l + 1;
  j["firm_class"] = std::move(firms);
  j["worker_type"] = std::move(workers);
  return j.dump(1);
}

GroundTruth truth_from_json(const std::string& text) {
  GroundTruth t;
  json j;
  try {
    j = json::parse(text);
    t.spec = spec_from(j.at("spec"));
    for (const auto& [id, k] : j.at("firm_class").items()) {
      t.firm_class[FirmId(id)] = k.get<int>() - 1;
      t.firms.emplace_back(id);
    }
    for (const auto& [id, l] : j.at("worker_type").items()) {
      t.worker_type[WorkerId(id)] = l.get<int>() - 1;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("ground truth JSON: ") + e.what());
  }
  return t;
}

}  // namespace wagemix::synth
