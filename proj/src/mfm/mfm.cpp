#include "quadscan/mfm.hpp"

#include <cmath>
#include <sstream>

#include "quadscan/ops.hpp"

namespace quadscan::mfm {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

std::string path_prefix(const std::string& prefix, ScanScale s) {
  return prefix + ".path_" + std::string(scale_name(s));
}

}  // namespace

PathSet PathSet::parse(std::string_view list) {
  PathSet p = none();
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    auto item = list.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      try {
        p.set(parse_scale(item), true);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    start = end + 1;
  }
  return p;
}

std::size_t PathSet::count() const {
  std::size_t n = 0;
  for (bool b : on) n += b ? 1 : 0;
  return n;
}

std::string PathSet::to_string() const {
  std::string s;
  for (auto scale : kAllScales) {
    if (!has(scale)) continue;
    if (!s.empty()) s += ',';
    s += scale_name(scale);
  }
  return s;
}

PathSet variant_paths(Variant v) {
  PathSet p = PathSet::none();
  p.set(ScanScale::forward, true);
  p.set(ScanScale::backward, true);
  switch (v) {
    case Variant::mamba: break;
    case Variant::mamba_v2: p.set(ScanScale::region, true); break;
    case Variant::mamba_v3: p.set(ScanScale::token, true); break;
    case Variant::full: p = PathSet::all(); break;
  }
  return p;
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::mamba: return "w/ Mamba";
    case Variant::mamba_v2: return "w/ Mamba v2";
    case Variant::mamba_v3: return "w/ Mamba v3";
    case Variant::full: return "Full Model";
  }
  return "?";
}

MfmBlock MfmBlock::create(ParamStore& store, const std::string& prefix, const MfmConfig& config,
                          Rng& rng) {
  if (config.paths.count() == 0) throw ConfigError("mfm: at least one scan path must be enabled");
  const std::size_t C = config.dim, Ci = config.inner();
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(C));
  const double out_bound = 1.0 / std::sqrt(static_cast<double>(Ci));
  store.add(prefix + ".in_x", uniform_tensor({C, Ci}, in_bound, rng));
  store.add(prefix + ".in_z", uniform_tensor({C, Ci}, in_bound, rng));
  store.add(prefix + ".out", uniform_tensor({Ci, C}, out_bound, rng));
  ssm::SsmConfig sc{Ci, config.d_state, config.conv_width};
  for (auto s : kAllScales) {
    if (config.paths.has(s)) ssm::SelectiveScanParams::create(store, path_prefix(prefix, s), sc, rng);
  }
  return bind(store, prefix, config);
}

MfmBlock MfmBlock::bind(ParamStore& store, const std::string& prefix, const MfmConfig& config) {
  MfmBlock b;
  b.config = config;
  b.in_x = store.get(prefix + ".in_x");
  b.in_z = store.get(prefix + ".in_z");
  b.out = store.get(prefix + ".out");
  for (auto s : kAllScales) {
    if (config.paths.has(s)) {
      b.path_params[static_cast<std::size_t>(s)] =
          ssm::SelectiveScanParams::bind(store, path_prefix(prefix, s));
    }
  }
  return b;
}

std::size_t MfmBlock::parameter_count() const {
  std::size_t n = in_x.numel() + in_z.numel() + out.numel();
  for (auto s : kAllScales) {
    const auto& p = path_params[static_cast<std::size_t>(s)];
    if (config.paths.has(s) && p) n += p->parameter_count();
  }
  return n;
}

MfmBlock variant(const MfmBlock& block, const PathSet& flags) {
  if (flags.count() == 0) throw ConfigError("mfm variant: all scan paths disabled");
  MfmBlock v = block;
  for (auto s : kAllScales) {
    if (flags.has(s) && !block.path_params[static_cast<std::size_t>(s)]) {
      throw ConfigError("mfm variant: block has no parameters for path '" +
                        std::string(scale_name(s)) + "'");
    }
  }
  v.config.paths = flags;
  return v;
}

MfmBlock variant(const MfmBlock& block, Variant v) { return variant(block, variant_paths(v)); }

Tensor gated_ssm(const Tensor& H, const MfmBlock& block, ScanScale path, std::size_t segment_len) {
  const auto& p = block.path_params[static_cast<std::size_t>(path)];
  if (!p) throw ConfigError("gated_ssm: path not present");
  Tensor xp = ops::matmul(H, block.in_x);
  Tensor z = ops::matmul(H, block.in_z);
  Tensor y = ssm::scan_path(xp, *p, segment_len);
  return ops::add(H, ops::matmul(ops::mul(y, ops::silu(z)), block.out));
}

namespace {

Tensor fuse(const Tensor& H, std::size_t seq, const std::array<const ScanOrder*, 4>& orders,
            const MfmBlock& block, MfmProbe* probe) {
  if (H.ndim() != 2 || H.dim(1) != block.config.dim) {
    throw ShapeError("mfm_forward: input " + shape_str(H.shape()) + " does not have " +
                     std::to_string(block.config.dim) + " channels");
  }
  if (seq == 0 || H.dim(0) == 0 || H.dim(0) % seq != 0) {
    throw ShapeError("mfm_forward: " + std::to_string(H.dim(0)) +
                     " rows do not match the geometry's " + std::to_string(seq) + " tokens");
  }
  const PathSet& paths = block.enabled();
  if (paths.count() == 0) throw ConfigError("mfm_forward: no scan path enabled");
  const std::size_t batch = H.dim(0) / seq;

  Tensor xp = ops::matmul(H, block.in_x);
  Tensor z = ops::matmul(H, block.in_z);
  Tensor merged;
  for (auto scale : kAllScales) {
    if (!paths.has(scale)) continue;
    const std::size_t i = static_cast<std::size_t>(scale);
    const auto& params = block.path_params[i];
    if (!params) throw ConfigError("mfm_forward: missing parameters for an enabled path");
    const ScanOrder& order = *orders[i];
    if (order.perm.size() != seq) throw ShapeError("mfm_forward: scan order length does not match the sequence");
    const auto fwd = batched_index(order.perm, batch);
    const auto inv = batched_index(order.inv, batch);
    Tensor visited = ops::gather_rows(xp, fwd);
    if (probe != nullptr) {
      Tensor back = ops::gather_rows(visited, inv);
      double err = 0.0;
      for (std::size_t k = 0; k < back.numel(); ++k) {
        err = std::max(err, std::fabs(back.at(k) - xp.at(k)));
      }
      probe->roundtrip_error[i] = std::max(probe->roundtrip_error[i], err);
      probe->visited[i] = true;
    }
    Tensor y = ssm::scan_path(visited, *params, seq);
    Tensor restored = ops::gather_rows(y, inv);
    merged = merged.defined() ? ops::add(merged, restored) : restored;
  }
  if (paths.count() > 1) merged = ops::scale(merged, 1.0 / static_cast<double>(paths.count()));
  Tensor gated = ops::mul(merged, ops::silu(z));
  return ops::add(H, ops::matmul(gated, block.out));
}

}  // namespace

Tensor mfm_forward(const Tensor& H, const TokenGeometry& geo, const MfmBlock& block,
                   MfmProbe* probe) {
  std::array<ScanOrder, 4> built;
  std::array<const ScanOrder*, 4> orders{};
  for (auto scale : kAllScales) {
    const std::size_t i = static_cast<std::size_t>(scale);
    if (!block.enabled().has(scale)) continue;
    built[i] = make_order(scale, geo);
    orders[i] = &built[i];
  }
  return fuse(H, geo.total_tokens(), orders, block, probe);
}

Tensor mfm_forward(const Tensor& H, const std::array<ScanOrder, 4>& orders, const MfmBlock& block) {
  std::array<const ScanOrder*, 4> ptrs{};
  std::size_t seq = 0;
  for (auto scale : kAllScales) {
    const std::size_t i = static_cast<std::size_t>(scale);
    if (!block.enabled().has(scale)) continue;
    ptrs[i] = &orders[i];
    seq = orders[i].perm.size();
  }
  return fuse(H, seq, ptrs, block, nullptr);
}

std::uint64_t path_flops(const MfmConfig& config, std::size_t total_tokens) {
  const std::uint64_t L = total_tokens, Ci = config.inner(), S = config.d_state;
  const std::uint64_t conv = L * Ci * config.conv_width;
  const std::uint64_t proj = L * Ci * Ci + 2 * L * Ci * S;  // delta, B, C
  const std::uint64_t scan = L * Ci * (3 * S + 1);
  return conv + proj + scan;
}

std::uint64_t count_flops(const MfmConfig& config, const TokenGeometry& geo) {
  const std::uint64_t L = geo.total_tokens(), C = config.dim, Ci = config.inner();
  const std::uint64_t projections = 2 * L * C * Ci + L * Ci * C;
  return projections + config.paths.count() * path_flops(config, L);
}

}  // namespace quadscan::mfm
