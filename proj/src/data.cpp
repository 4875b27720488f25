#include "voxelformer/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "voxelformer/retrieval.hpp"

namespace vxf {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint formats are little-endian");

namespace {

constexpr char kMagic[4] = {'V', 'X', 'F', '1'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void write_f64(std::ostream& os, const double* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(8 * n));
}
uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require(is.good(), "dataset: truncated file while reading " + what);
  return v;
}
void read_f64(std::istream& is, double* p, size_t n, const std::string& what) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(8 * n));
  require(is.good(), "dataset: truncated file while reading " + what);
}

}  // namespace

void DataGenConfig::validate() const {
  require(subjects >= 1, "dataset config: subjects must be >= 1");
  require(train_stimuli >= 1 && test_stimuli >= 0,
          "dataset config: stimulus counts must be positive");
  require(!voxel_counts.empty(), "dataset config: voxel_counts empty");
  for (int64_t n : voxel_counts)
    require(n >= 1, "dataset config: voxel counts must be positive");
  require(target_dim >= 1, "dataset config: target_dim must be >= 1");
  require(noise_sigma >= 0.0, "dataset config: noise_sigma must be >= 0");
}

int64_t Dataset::min_voxel_count() const {
  int64_t m = INT64_MAX;
  for (const auto& s : subjects) m = std::min(m, s.voxel_count);
  return m;
}

Dataset generate_dataset(const DataGenConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.stimulus_count = cfg.train_stimuli + cfg.test_stimuli;
  const int64_t d = cfg.target_dim;

  Rng master(cfg.seed);
  // Shared stimulus latents; the frozen targets are their unit-norm versions
  // (targets live on the sphere). Responses use the raw latent.
  Rng stim_rng = master.fork(0x5717);
  std::vector<double> latents(static_cast<size_t>(ds.stimulus_count * d));
  for (auto& v : latents) v = stim_rng.normal();
  ds.targets.resize(latents.size());
  for (int64_t s = 0; s < ds.stimulus_count; ++s) {
    const double* e = latents.data() + s * d;
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) ss += e[j] * e[j];
    const double inv = 1.0 / std::sqrt(ss + 1e-12);
    for (int64_t j = 0; j < d; ++j)
      ds.targets[static_cast<size_t>(s * d + j)] = e[j] * inv;
  }

  const double mix_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (int64_t si = 0; si < cfg.subjects; ++si) {
    Rng rng = master.fork(0x50B + static_cast<uint64_t>(si));
    SubjectData sub;
    sub.subject_id = si;
    sub.voxel_count =
        cfg.voxel_counts[static_cast<size_t>(si) % cfg.voxel_counts.size()];
    const int64_t n = sub.voxel_count;
    sub.coords.resize(static_cast<size_t>(n * 3));
    for (auto& c : sub.coords) c = rng.uniform(-1.0, 1.0);
    sub.mixing.resize(static_cast<size_t>(n * d));
    for (auto& w : sub.mixing) w = rng.normal(0.0, mix_std);
    sub.stimulus_ids.resize(static_cast<size_t>(ds.stimulus_count));
    sub.responses.resize(static_cast<size_t>(ds.stimulus_count * n));
    for (int64_t s = 0; s < ds.stimulus_count; ++s) {
      sub.stimulus_ids[static_cast<size_t>(s)] = static_cast<uint32_t>(s);
      const double* e = latents.data() + s * d;
      double* r = sub.responses.data() + s * n;
      for (int64_t v = 0; v < n; ++v) {
        double acc = 0.0;
        const double* w = sub.mixing.data() + v * d;
        for (int64_t j = 0; j < d; ++j) acc += w[j] * e[j];
        r[v] = acc;
      }
      if (cfg.noise_sigma > 0.0)
        for (int64_t v = 0; v < n; ++v)
          r[v] += rng.normal(0.0, cfg.noise_sigma);
    }
    ds.subjects.push_back(std::move(sub));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream mf(fs::path(dir) / "manifest");
    require(mf.good(), "save_dataset: cannot write manifest in " + dir);
    mf << "format = VXF1\n";
    mf << "seed = " << ds.config.seed << "\n";
    mf << "noise_sigma = " << std::hexfloat << ds.config.noise_sigma
       << std::defaultfloat << "\n";
    mf << "target_dim = " << ds.config.target_dim << "\n";
    mf << "train_stimuli = " << ds.config.train_stimuli << "\n";
    mf << "test_stimuli = " << ds.config.test_stimuli << "\n";
    mf << "subjects = " << ds.subjects.size() << "\n";
    for (size_t i = 0; i < ds.subjects.size(); ++i) {
      mf << "subject_" << i << "_id = " << ds.subjects[i].subject_id << "\n";
      mf << "subject_" << i << "_voxels = " << ds.subjects[i].voxel_count
         << "\n";
      mf << "subject_" << i << "_samples = " << ds.subjects[i].sample_count()
         << "\n";
      mf << "subject_" << i << "_file = subject_" << i << ".bin\n";
    }
    mf << "targets_file = targets.bin\n";
  }
  for (size_t i = 0; i < ds.subjects.size(); ++i) {
    const auto& sub = ds.subjects[i];
    std::ofstream f(fs::path(dir) / ("subject_" + std::to_string(i) + ".bin"),
                    std::ios::binary);
    require(f.good(), "save_dataset: cannot write subject file in " + dir);
    f.write(kMagic, 4);
    write_u32(f, static_cast<uint32_t>(sub.voxel_count));
    write_u32(f, static_cast<uint32_t>(sub.sample_count()));
    write_u32(f, static_cast<uint32_t>(ds.config.target_dim));
    write_f64(f, sub.coords.data(), sub.coords.size());
    for (int64_t s = 0; s < sub.sample_count(); ++s) {
      write_u32(f, sub.stimulus_ids[static_cast<size_t>(s)]);
      write_f64(f, sub.response_row(s), static_cast<size_t>(sub.voxel_count));
    }
  }
  {
    std::ofstream f(fs::path(dir) / "targets.bin", std::ios::binary);
    require(f.good(), "save_dataset: cannot write targets.bin in " + dir);
    write_u32(f, static_cast<uint32_t>(ds.stimulus_count));
    write_u32(f, static_cast<uint32_t>(ds.config.target_dim));
    write_f64(f, ds.targets.data(), ds.targets.size());
  }
}

namespace {

std::map<std::string, std::string> parse_manifest(const std::string& path) {
  std::ifstream mf(path);
  require(mf.good(), "load_dataset: missing manifest at " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(mf, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

int64_t manifest_int(const std::map<std::string, std::string>& kv,
                     const std::string& key) {
  auto it = kv.find(key);
  require(it != kv.end(), "load_dataset: manifest missing key " + key);
  return std::stoll(it->second);
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  auto kv = parse_manifest((fs::path(dir) / "manifest").string());
  require(kv.count("format") && kv["format"] == "VXF1",
          "load_dataset: unsupported manifest format in " + dir);
  Dataset ds;
  ds.config.seed = static_cast<uint64_t>(manifest_int(kv, "seed"));
  ds.config.noise_sigma = std::strtod(kv.at("noise_sigma").c_str(), nullptr);
  ds.config.target_dim = manifest_int(kv, "target_dim");
  ds.config.train_stimuli = manifest_int(kv, "train_stimuli");
  ds.config.test_stimuli = manifest_int(kv, "test_stimuli");
  ds.config.subjects = manifest_int(kv, "subjects");
  ds.stimulus_count = ds.config.train_stimuli + ds.config.test_stimuli;

  ds.config.voxel_counts.clear();
  for (int64_t i = 0; i < ds.config.subjects; ++i) {
    const std::string base = "subject_" + std::to_string(i) + "_";
    auto fit = kv.find(base + "file");
    require(fit != kv.end(), "load_dataset: manifest missing " + base + "file");
    std::ifstream f(fs::path(dir) / fit->second, std::ios::binary);
    require(f.good(), "load_dataset: missing subject file " + fit->second);
    char magic[4];
    f.read(magic, 4);
    require(f.good() && std::memcmp(magic, kMagic, 4) == 0,
            "load_dataset: bad magic in " + fit->second);
    SubjectData sub;
    sub.subject_id = manifest_int(kv, base + "id");
    sub.voxel_count = read_u32(f, "voxel count");
    const uint32_t samples = read_u32(f, "sample count");
    const uint32_t tdim = read_u32(f, "target dim");
    require(static_cast<int64_t>(tdim) == ds.config.target_dim,
            "load_dataset: target dim mismatch in " + fit->second);
    require(static_cast<int64_t>(sub.voxel_count) ==
                manifest_int(kv, base + "voxels"),
            "load_dataset: voxel count mismatch for subject " +
                std::to_string(i));
    sub.coords.resize(static_cast<size_t>(sub.voxel_count * 3));
    read_f64(f, sub.coords.data(), sub.coords.size(), "coords");
    sub.stimulus_ids.resize(samples);
    sub.responses.resize(static_cast<size_t>(samples) *
                         static_cast<size_t>(sub.voxel_count));
    for (uint32_t s = 0; s < samples; ++s) {
      sub.stimulus_ids[s] = read_u32(f, "stimulus id");
      read_f64(f, sub.responses.data() +
                      static_cast<size_t>(s) * static_cast<size_t>(sub.voxel_count),
               static_cast<size_t>(sub.voxel_count), "responses");
    }
    ds.config.voxel_counts.push_back(sub.voxel_count);
    ds.subjects.push_back(std::move(sub));
  }
  {
    std::ifstream f(fs::path(dir) / "targets.bin", std::ios::binary);
    require(f.good(), "load_dataset: missing targets.bin in " + dir);
    const uint32_t count = read_u32(f, "stimulus count");
    const uint32_t dim = read_u32(f, "target dim");
    require(static_cast<int64_t>(count) == ds.stimulus_count,
            "load_dataset: targets.bin stimulus count mismatch");
    require(static_cast<int64_t>(dim) == ds.config.target_dim,
            "load_dataset: targets.bin dim mismatch");
    ds.targets.resize(static_cast<size_t>(count) * dim);
    read_f64(f, ds.targets.data(), ds.targets.size(), "targets");
  }
  return ds;
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(const Dataset& ds, int64_t batch_size,
                             SplitMode mode, uint64_t seed, int64_t epoch)
    : ds_(ds), batch_size_(batch_size) {
  require(batch_size >= 1, "BatchIterator: batch_size must be >= 1");
  Rng master(seed);
  for (size_t si = 0; si < ds.subjects.size(); ++si) {
    const auto& sub = ds.subjects[si];
    std::vector<int64_t> idx;
    for (int64_t s = 0; s < sub.sample_count(); ++s) {
      const bool train = ds.is_train_stimulus(sub.stimulus_ids[static_cast<size_t>(s)]);
      if ((mode == SplitMode::Train) == train) idx.push_back(s);
    }
    require(batch_size <= static_cast<int64_t>(idx.size()),
            "BatchIterator: batch_size " + std::to_string(batch_size) +
                " exceeds sample count " + std::to_string(idx.size()) +
                " for subject " + std::to_string(sub.subject_id));
    Rng shuffle_rng = master.fork(static_cast<uint64_t>(epoch),
                                  0x1000 + static_cast<uint64_t>(si));
    const auto perm = shuffle_rng.permutation(static_cast<int64_t>(idx.size()));
    std::vector<int64_t> shuffled(idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      shuffled[i] = idx[static_cast<size_t>(perm[i])];
    order_.push_back(std::move(shuffled));
    cursor_.push_back(0);
  }
}

bool BatchIterator::next(Batch& out) {
  const size_t n_sub = order_.size();
  for (size_t tried = 0; tried < n_sub; ++tried) {
    const size_t si = (turn_ + tried) % n_sub;
    auto& cur = cursor_[si];
    if (cur >= static_cast<int64_t>(order_[si].size())) continue;
    const auto& sub = ds_.subjects[si];
    const int64_t take = std::min<int64_t>(
        batch_size_, static_cast<int64_t>(order_[si].size()) - cur);
    out.subject_id = sub.subject_id;
    out.size = take;
    out.voxel_count = sub.voxel_count;
    out.responses.resize(static_cast<size_t>(take * sub.voxel_count));
    out.coords.resize(static_cast<size_t>(take * sub.voxel_count * 3));
    out.targets.resize(static_cast<size_t>(take * ds_.config.target_dim));
    out.stimulus_ids.resize(static_cast<size_t>(take));
    for (int64_t b = 0; b < take; ++b) {
      const int64_t s = order_[si][static_cast<size_t>(cur + b)];
      const uint32_t stim = sub.stimulus_ids[static_cast<size_t>(s)];
      out.stimulus_ids[static_cast<size_t>(b)] = stim;
      std::copy_n(sub.response_row(s), sub.voxel_count,
                  out.responses.data() + b * sub.voxel_count);
      std::copy_n(sub.coords.data(), sub.voxel_count * 3,
                  out.coords.data() + b * sub.voxel_count * 3);
      std::copy_n(ds_.target_row(stim), ds_.config.target_dim,
                  out.targets.data() + b * ds_.config.target_dim);
    }
    cur += take;
    turn_ = (si + 1) % n_sub;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

namespace {

// solves (A + ridge*I) X = B in place for symmetric positive definite A
void cholesky_solve(std::vector<double>& a, int64_t n, std::vector<double>& b,
                    int64_t cols, double ridge) {
  for (int64_t i = 0; i < n; ++i) a[static_cast<size_t>(i * n + i)] += ridge;
  // in-place Cholesky A = L L^T
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i * n + j)];
      for (int64_t k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i * n + k)] * a[static_cast<size_t>(j * n + k)];
      if (i == j) {
        require(s > 0.0, "least_squares_oracle: matrix not positive definite");
        a[static_cast<size_t>(i * n + i)] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i * n + j)] = s / a[static_cast<size_t>(j * n + j)];
      }
    }
  }
  // forward/backward substitution per column
  for (int64_t c = 0; c < cols; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      double s = b[static_cast<size_t>(i * cols + c)];
      for (int64_t k = 0; k < i; ++k)
        s -= a[static_cast<size_t>(i * n + k)] * b[static_cast<size_t>(k * cols + c)];
      b[static_cast<size_t>(i * cols + c)] = s / a[static_cast<size_t>(i * n + i)];
    }
    for (int64_t i = n - 1; i >= 0; --i) {
      double s = b[static_cast<size_t>(i * cols + c)];
      for (int64_t k = i + 1; k < n; ++k)
        s -= a[static_cast<size_t>(k * n + i)] * b[static_cast<size_t>(k * cols + c)];
      b[static_cast<size_t>(i * cols + c)] = s / a[static_cast<size_t>(i * n + i)];
    }
  }
}

}  // namespace

OracleReport least_squares_oracle(const Dataset& ds, int64_t pool_size,
                                  int64_t trials, uint64_t seed) {
  require(pool_size >= 2 && trials >= 1,
          "least_squares_oracle: pool_size >= 2 and trials >= 1 required");
  const int64_t d = ds.config.target_dim;
  OracleReport rep;
  Rng master(seed);
  for (size_t si = 0; si < ds.subjects.size(); ++si) {
    const auto& sub = ds.subjects[si];
    const int64_t n = sub.voxel_count;
    std::vector<int64_t> train_idx, test_idx;
    for (int64_t s = 0; s < sub.sample_count(); ++s)
      (ds.is_train_stimulus(sub.stimulus_ids[static_cast<size_t>(s)])
           ? train_idx
           : test_idx)
          .push_back(s);
    require(static_cast<int64_t>(test_idx.size()) >= pool_size,
            "least_squares_oracle: subject " + std::to_string(sub.subject_id) +
                " has " + std::to_string(test_idx.size()) +
                " test samples, pool needs " + std::to_string(pool_size));
    // normal equations: (R^T R + ridge I) X = R^T T
    std::vector<double> ata(static_cast<size_t>(n * n), 0.0);
    std::vector<double> atb(static_cast<size_t>(n * d), 0.0);
    for (int64_t t : train_idx) {
      const double* r = sub.response_row(t);
      const double* tgt = ds.target_row(sub.stimulus_ids[static_cast<size_t>(t)]);
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j <= i; ++j)
          ata[static_cast<size_t>(i * n + j)] += r[i] * r[j];
        for (int64_t j = 0; j < d; ++j)
          atb[static_cast<size_t>(i * d + j)] += r[i] * tgt[j];
      }
    }
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j)
        ata[static_cast<size_t>(i * n + j)] = ata[static_cast<size_t>(j * n + i)];
    cholesky_solve(ata, n, atb, d, 1e-8);

    // predicted embeddings for every test sample
    std::vector<double> pred(test_idx.size() * static_cast<size_t>(d));
    std::vector<double> truth(test_idx.size() * static_cast<size_t>(d));
    for (size_t ti = 0; ti < test_idx.size(); ++ti) {
      const double* r = sub.response_row(test_idx[ti]);
      double* p = pred.data() + ti * static_cast<size_t>(d);
      for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i)
          acc += r[i] * atb[static_cast<size_t>(i * d + j)];
        p[j] = acc;
      }
      std::copy_n(
          ds.target_row(sub.stimulus_ids[static_cast<size_t>(test_idx[ti])]),
          d, truth.data() + ti * static_cast<size_t>(d));
    }
    Rng trial_rng = master.fork(0xE7A1 + static_cast<uint64_t>(si));
    const PoolAccuracy acc = pooled_top1(pred, truth, static_cast<int64_t>(test_idx.size()),
                                         d, pool_size, trials, trial_rng);
    rep.per_subject_fwd.push_back(acc.fwd);
    rep.per_subject_bwd.push_back(acc.bwd);
  }
  for (double v : rep.per_subject_fwd) rep.fwd_top1 += v;
  for (double v : rep.per_subject_bwd) rep.bwd_top1 += v;
  rep.fwd_top1 /= static_cast<double>(rep.per_subject_fwd.size());
  rep.bwd_top1 /= static_cast<double>(rep.per_subject_bwd.size());
  return rep;
}

}  // namespace vxf
