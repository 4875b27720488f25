#include "voxelformer/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "voxelformer/data.hpp"
#include "voxelformer/model.hpp"

#include <nlohmann/json.hpp>

namespace vxf {

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "cosine_matrix: inputs must be [P,D], got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  require(a.dim(1) == b.dim(1),
          "cosine_matrix: dim mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const int64_t p = a.dim(0), q = b.dim(0), d = a.dim(1);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto norms = [d](const std::vector<double>& v, int64_t rows,
                   const char* side) {
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
      double ss = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double e = v[static_cast<size_t>(i * d + j)];
        ss += e * e;
      }
      require(ss > 0.0, std::string("cosine_matrix: zero-norm row ") +
                            std::to_string(i) + " in input " + side);
      out[static_cast<size_t>(i)] = std::sqrt(ss);
    }
    return out;
  };
  const auto na = norms(av, p, "a");
  const auto nb = norms(bv, q, "b");
  std::vector<double> sim(static_cast<size_t>(p * q));
  for (int64_t i = 0; i < p; ++i)
    for (int64_t j = 0; j < q; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < d; ++k)
        dot += av[static_cast<size_t>(i * d + k)] *
               bv[static_cast<size_t>(j * d + k)];
      sim[static_cast<size_t>(i * q + j)] =
          dot / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)]);
    }
  return Tensor::leaf({p, q}, std::move(sim), false);
}

double topk_retrieval(const Tensor& sim, int64_t k, Direction dir) {
  require(sim.rank() == 2 && sim.dim(0) == sim.dim(1),
          "topk_retrieval: similarity matrix must be square, got " +
              shape_str(sim.shape()));
  const int64_t p = sim.dim(0);
  require(k >= 1 && k <= p, "topk_retrieval: k=" + std::to_string(k) +
                                " outside [1," + std::to_string(p) + "]");
  const auto& s = sim.data();
  auto at = [&](int64_t i, int64_t j) {
    return dir == Direction::Forward ? s[static_cast<size_t>(i * p + j)]
                                     : s[static_cast<size_t>(j * p + i)];
  };
  int64_t hits = 0;
  for (int64_t i = 0; i < p; ++i) {
    const double diag = at(i, i);
    int64_t better = 0;
    for (int64_t j = 0; j < p; ++j) {
      if (j == i) continue;
      // deterministic tie-break: an equal entry at a lower index outranks
      if (at(i, j) > diag || (at(i, j) == diag && j < i)) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p);
}

PoolAccuracy pooled_top1(const std::vector<double>& a,
                         const std::vector<double>& b, int64_t rows,
                         int64_t dim, int64_t pool_size, int64_t trials,
                         Rng& rng) {
  require(rows >= pool_size,
          "pooled_top1: pool_size " + std::to_string(pool_size) +
              " exceeds available samples " + std::to_string(rows));
  PoolAccuracy acc;
  for (int64_t t = 0; t < trials; ++t) {
    // sample pool_size distinct rows: partial Fisher-Yates
    std::vector<int64_t> idx(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < pool_size; ++i)
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(i + rng.uniform_int(rows - i))]);
    std::vector<double> pa(static_cast<size_t>(pool_size * dim));
    std::vector<double> pb(static_cast<size_t>(pool_size * dim));
    for (int64_t i = 0; i < pool_size; ++i) {
      std::copy_n(a.data() + idx[static_cast<size_t>(i)] * dim, dim,
                  pa.data() + i * dim);
      std::copy_n(b.data() + idx[static_cast<size_t>(i)] * dim, dim,
                  pb.data() + i * dim);
    }
    Tensor sim = cosine_matrix(Tensor::leaf({pool_size, dim}, std::move(pa)),
                               Tensor::leaf({pool_size, dim}, std::move(pb)));
    acc.fwd += topk_retrieval(sim, 1, Direction::Forward);
    acc.bwd += topk_retrieval(sim, 1, Direction::Backward);
  }
  acc.fwd /= static_cast<double>(trials);
  acc.bwd /= static_cast<double>(trials);
  return acc;
}

std::string RetrievalReport::to_json() const {
  nlohmann::json j;
  j["pool_size"] = pool_size;
  j["trials"] = trials;
  j["seed"] = seed;
  j["fwd_top1"] = fwd_top1;
  j["bwd_top1"] = bwd_top1;
  j["per_subject"] = nlohmann::json::array();
  for (const auto& s : per_subject)
    j["per_subject"].push_back({{"subject_id", s.subject_id},
                                {"fwd_top1", s.fwd_top1},
                                {"bwd_top1", s.bwd_top1}});
  return j.dump();
}

std::string RetrievalReport::to_csv() const {
  std::ostringstream os;
  os << "subject_id,fwd_top1,bwd_top1,pool_size,trials\n";
  os.precision(17);
  for (const auto& s : per_subject)
    os << s.subject_id << "," << s.fwd_top1 << "," << s.bwd_top1 << ","
       << pool_size << "," << trials << "\n";
  return os.str();
}

RetrievalReport evaluate_retrieval(const VoxelFormer& model, const Dataset& ds,
                                   int64_t pool_size, int64_t trials,
                                   uint64_t seed) {
  require(pool_size >= 2 && trials >= 1,
          "evaluate_retrieval: pool_size >= 2 and trials >= 1 required");
  const int64_t dr = model.config().retrieval_dim;
  RetrievalReport rep;
  rep.pool_size = pool_size;
  rep.trials = trials;
  rep.seed = seed;
  Rng master(seed);
  for (size_t si = 0; si < ds.subjects.size(); ++si) {
    const auto& sub = ds.subjects[si];
    std::vector<int64_t> test_idx;
    for (int64_t s = 0; s < sub.sample_count(); ++s)
      if (!ds.is_train_stimulus(sub.stimulus_ids[static_cast<size_t>(s)]))
        test_idx.push_back(s);
    require(static_cast<int64_t>(test_idx.size()) >= pool_size,
            "evaluate_retrieval: subject " + std::to_string(sub.subject_id) +
                " has " + std::to_string(test_idx.size()) +
                " test samples, pool needs " + std::to_string(pool_size));
    // embed every test sample once; trials only re-sample pools
    const int64_t count = static_cast<int64_t>(test_idx.size());
    std::vector<double> brain(static_cast<size_t>(count * dr));
    std::vector<double> image(static_cast<size_t>(count * dr));
    const int64_t chunk = 64;
    for (int64_t start = 0; start < count; start += chunk) {
      const int64_t b = std::min(chunk, count - start);
      std::vector<double> resp(static_cast<size_t>(b * sub.voxel_count));
      std::vector<double> coords(static_cast<size_t>(b * sub.voxel_count * 3));
      std::vector<double> tgt(static_cast<size_t>(b * ds.config.target_dim));
      for (int64_t i = 0; i < b; ++i) {
        const int64_t s = test_idx[static_cast<size_t>(start + i)];
        std::copy_n(sub.response_row(s), sub.voxel_count,
                    resp.data() + i * sub.voxel_count);
        std::copy_n(sub.coords.data(), sub.voxel_count * 3,
                    coords.data() + i * sub.voxel_count * 3);
        std::copy_n(ds.target_row(sub.stimulus_ids[static_cast<size_t>(s)]),
                    ds.config.target_dim, tgt.data() + i * ds.config.target_dim);
      }
      Tensor r = Tensor::leaf({b, sub.voxel_count}, std::move(resp));
      Tensor c = Tensor::leaf({b, sub.voxel_count, 3}, std::move(coords));
      Tensor proj = model.forward(r, c).projection;
      std::copy_n(proj.data().data(), b * dr, brain.data() + start * dr);
      Tensor mapped = model.map_targets(
          Tensor::leaf({b, ds.config.target_dim}, std::move(tgt)));
      std::copy_n(mapped.data().data(), b * dr, image.data() + start * dr);
    }
    Rng trial_rng = master.fork(0xE7A1 + static_cast<uint64_t>(si));
    const PoolAccuracy acc =
        pooled_top1(brain, image, count, dr, pool_size, trials, trial_rng);
    rep.per_subject.push_back({sub.subject_id, acc.fwd, acc.bwd});
  }
  for (const auto& s : rep.per_subject) {
    rep.fwd_top1 += s.fwd_top1;
    rep.bwd_top1 += s.bwd_top1;
  }
  rep.fwd_top1 /= static_cast<double>(rep.per_subject.size());
  rep.bwd_top1 /= static_cast<double>(rep.per_subject.size());
  return rep;
}

}  // namespace vxf
