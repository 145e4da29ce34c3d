#include "kinetra/dataset.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "kinetra/errors.hpp"
#include "kinetra/operators.hpp"

namespace kinetra {

namespace {

VecX interp_faces(const VecX& centers) {
  const int n = static_cast<int>(centers.size());
  VecX f(n);
  for (int j = 0; j < n; ++j) f[j] = 0.5 * (centers[j] + centers[(j + 1) % n]);
  return f;
}

}  // namespace

VecX Dataset::sigma_s_faces() const { return interp_faces(sigma_s); }
VecX Dataset::sigma_a_faces() const { return interp_faces(sigma_a); }

Dataset generate_dataset(const PhysicsSpec& phys, const PhaseGrid& grid,
                         double dt, int nt, int stride_x, int stride_t,
                         const KineticState* init) {
  phys.validate(grid);
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (nt < 1) throw ConfigError("nt must be at least 1");
  if (stride_x < 1 || stride_x % 2 == 0 || grid.nx % stride_x != 0)
    throw ConfigError("stride_x must be an odd divisor of nx");
  if (stride_t < 1 || nt % stride_t != 0)
    throw ConfigError("stride_t must divide nt");

  SampledPhysics p = sample_physics(phys, grid);
  KineticState st;
  if (init) {
    require(init->g.rows() == grid.nv && init->g.cols() == grid.nx &&
                init->rho.size() == grid.nx,
            "initial state shape does not match grid");
    st = *init;
  } else {
    st.rho = default_rho0(grid);
    st.g = default_g0(grid, phys);
  }
  if (vavg(st.g, grid).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("initial fluctuation must have zero velocity mean");

  Dataset ds;
  ds.grid = make_grid(grid.nx / stride_x, grid.nv);
  ds.eps = phys.eps;
  ds.dt = stride_t * dt;
  ds.sigma_s = phys.sigma_s.sample(ds.grid.x_centers);
  ds.sigma_a = phys.sigma_a.sample(ds.grid.x_centers);
  ds.source = phys.source.sample(ds.grid.x_centers);

  const int frames = nt / stride_t;
  const int sx = stride_x;
  const int cnx = ds.grid.nx;
  ds.times.resize(frames);
  ds.g_seq.reserve(frames);
  ds.rho_seq.reserve(frames);
  for (int k = 1; k <= nt; ++k) {
    st = step_ars222(st, p, grid, dt);
    if (k % stride_t != 0) continue;
    const int f = k / stride_t - 1;
    ds.times[f] = (f + 1) * ds.dt;
    FieldG gc(grid.nv, cnx);
    FieldRho rc(cnx);
    for (int j = 0; j < cnx; ++j) {
      gc.col(j) = st.g.col(j * sx + sx - 1);      // coarse face j
      rc[j] = st.rho[j * sx + (sx - 1) / 2];       // coarse center j
    }
    ds.g_seq.push_back(std::move(gc));
    ds.rho_seq.push_back(std::move(rc));
  }
  return ds;
}

// ============================================================================
// Binary format: magic "KDS1", u32 version, u64 nv/nx/nt, f64 eps/dt/dx,
// then sigma_s, sigma_a, source (nx each), then the g frames (t, v, x
// row-major) and the rho frames.  Little-endian throughout.
// ============================================================================

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_doubles(std::ofstream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(double)));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError("truncated dataset file");
  return v;
}

void get_doubles(std::ifstream& is, double* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(double)));
  if (!is) throw FormatError("truncated dataset file");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("KDS1", 4);
  put<std::uint32_t>(os, 1u);
  put<std::uint64_t>(os, std::uint64_t(ds.grid.nv));
  put<std::uint64_t>(os, std::uint64_t(ds.grid.nx));
  put<std::uint64_t>(os, std::uint64_t(ds.nt()));
  put<double>(os, ds.eps);
  put<double>(os, ds.dt);
  put<double>(os, ds.grid.dx);
  put_doubles(os, ds.sigma_s.data(), ds.sigma_s.size());
  put_doubles(os, ds.sigma_a.data(), ds.sigma_a.size());
  put_doubles(os, ds.source.data(), ds.source.size());
  Eigen::RowVectorXd row;
  for (const FieldG& g : ds.g_seq)
    for (int i = 0; i < g.rows(); ++i) {
      row = g.row(i);
      put_doubles(os, row.data(), std::size_t(row.size()));
    }
  for (const FieldRho& r : ds.rho_seq) put_doubles(os, r.data(), r.size());
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "KDS1", 4) != 0)
    throw FormatError("not a dataset file (bad magic): " + path);
  auto version = get<std::uint32_t>(is);
  if (version != 1u) throw FormatError("unsupported dataset version");
  auto nv = get<std::uint64_t>(is);
  auto nx = get<std::uint64_t>(is);
  auto ntf = get<std::uint64_t>(is);
  if (nv < 1 || nv > 64 || nx < 4 || nx > (1u << 24) || ntf < 1 ||
      ntf > (1u << 24))
    throw FormatError("dataset header out of range");
  Dataset ds;
  ds.grid = make_grid(int(nx), int(nv));
  ds.eps = get<double>(is);
  ds.dt = get<double>(is);
  double dx = get<double>(is);
  if (std::abs(dx - ds.grid.dx) > 1e-12 * ds.grid.dx)
    throw FormatError("dataset dx inconsistent with nx");
  if (!(ds.eps > 0.0) || !(ds.dt > 0.0))
    throw FormatError("dataset header: eps and dt must be positive");
  ds.sigma_s.resize(nx);
  ds.sigma_a.resize(nx);
  ds.source.resize(nx);
  get_doubles(is, ds.sigma_s.data(), nx);
  get_doubles(is, ds.sigma_a.data(), nx);
  get_doubles(is, ds.source.data(), nx);
  ds.times.resize(Eigen::Index(ntf));
  for (std::uint64_t f = 0; f < ntf; ++f)
    ds.times[Eigen::Index(f)] = double(f + 1) * ds.dt;
  ds.g_seq.resize(ntf);
  ds.rho_seq.resize(ntf);
  const int inv = int(nv), inx = int(nx);
  Eigen::RowVectorXd row{inx};
  for (std::uint64_t f = 0; f < ntf; ++f) {
    FieldG g{inv, inx};
    for (int i = 0; i < inv; ++i) {
      get_doubles(is, row.data(), nx);
      g.row(i) = row;
    }
    ds.g_seq[f] = std::move(g);
  }
  for (std::uint64_t f = 0; f < ntf; ++f) {
    FieldRho r{inx};
    get_doubles(is, r.data(), nx);
    ds.rho_seq[f] = std::move(r);
  }
  return ds;
}

}  // namespace kinetra
