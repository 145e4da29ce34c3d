#include "kinetra/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace kinetra {

namespace {

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

double parse_d(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw FormatError("checkpoint: bad number '" + s + "'");
  return v;
}

int parse_i(const std::string& s) {
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw FormatError("checkpoint: bad integer '" + s + "'");
  return static_cast<int>(v);
}

// Sequential token reader over the whole file.
struct Reader {
  std::vector<std::vector<std::string>> lines;
  std::size_t at = 0;

  explicit Reader(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::vector<std::string> toks;
      std::string t;
      while (ss >> t) toks.push_back(t);
      if (!toks.empty()) lines.push_back(std::move(toks));
    }
  }

  // Next line must start with `key`; returns the remaining tokens.
  std::vector<std::string> expect(const std::string& key) {
    if (at >= lines.size())
      throw FormatError("checkpoint: truncated before '" + key + "'");
    if (lines[at][0] != key)
      throw FormatError("checkpoint: unexpected key '" + lines[at][0] +
                        "' (expected '" + key + "')");
    std::vector<std::string> rest(lines[at].begin() + 1, lines[at].end());
    ++at;
    return rest;
  }

  double one_d(const std::string& key) {
    auto r = expect(key);
    if (r.size() != 1) throw FormatError("checkpoint: '" + key + "' needs one value");
    return parse_d(r[0]);
  }
  int one_i(const std::string& key) {
    auto r = expect(key);
    if (r.size() != 1) throw FormatError("checkpoint: '" + key + "' needs one value");
    return parse_i(r[0]);
  }
  std::string one_s(const std::string& key) {
    auto r = expect(key);
    if (r.size() != 1) throw FormatError("checkpoint: '" + key + "' needs one value");
    return r[0];
  }
  void done() {
    if (at != lines.size())
      throw FormatError("checkpoint: trailing content after 'end'");
  }
};

void parse_values(const std::vector<std::string>& toks, Eigen::Index want,
                  const std::string& what, std::vector<double>& out) {
  if (static_cast<Eigen::Index>(toks.size()) != want)
    throw FormatError("checkpoint: " + what + " expects " +
                      std::to_string(want) + " values, got " +
                      std::to_string(toks.size()));
  out.clear();
  for (const std::string& t : toks) out.push_back(parse_d(t));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& mp) {
  mp.cfg.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  const AnsatzConfig& cfg = mp.cfg;

  out << "kinetra_checkpoint 1\n";
  out << "components " << components_name(cfg.components) << "\n";
  out << "base_ops";
  for (OpTag t : cfg.base_ops) out << ' ' << op_name(t);
  out << "\n";
  out << "K " << cfg.K << "\n";
  out << "M " << cfg.M << "\n";
  out << "mean_free_mask " << (cfg.mean_free_mask ? 1 : 0) << "\n";
  out << "adv_order " << cfg.adv_order << "\n";
  out << "readout_spatial " << (cfg.readout_spatial ? 1 : 0) << "\n";
  out << "readout_np " << cfg.readout_shape.np << "\n";
  out << "readout_deg " << cfg.readout_shape.deg << "\n";
  out << "eps_mode "
      << (mp.scale.mode == EpsMode::Global ? "global" : "interval") << "\n";
  out << "eps_interval " << mp.scale.interval << "\n";
  out << "w_eps " << fmt(mp.scale.w_eps) << "\n";
  out << "sigma_s_mode " << sigma_s_mode_name(mp.phys.sigma_s_mode) << "\n";
  out << "w_sigma_s " << fmt(mp.phys.w_sigma_s) << "\n";
  out << "sigma_np " << mp.phys.sigma_s_sp.np << "\n";
  out << "sigma_deg " << mp.phys.sigma_s_sp.deg << "\n";
  if (mp.phys.sigma_s_mode == SigmaSMode::TrainSpatial)
    for (int p = 0; p < mp.phys.sigma_s_sp.np; ++p) {
      out << "sigma_row " << p;
      for (int d = 0; d <= mp.phys.sigma_s_sp.deg; ++d)
        out << ' ' << fmt(mp.phys.sigma_s_sp.a(p, d));
      out << "\n";
    }

  for (std::size_t pi = 0; pi < mp.nets.size(); ++pi)
    for (std::size_t m = 0; m < mp.nets[pi].size(); ++m) {
      const LayerNet& net = mp.nets[pi][m];
      for (std::size_t k = 0; k < net.W.size(); ++k) {
        out << "net " << pi << ' ' << m << " W " << k;
        for (int r = 0; r < net.W[k].rows(); ++r)
          for (int c = 0; c < net.W[k].cols(); ++c)
            out << ' ' << fmt(net.W[k](r, c));
        out << "\n";
        out << "net " << pi << ' ' << m << " B " << k << ' '
            << fmt(net.B[k](0)) << ' ' << fmt(net.B[k](1)) << "\n";
      }
      if (cfg.readout_spatial) {
        for (int r = 0; r < net.readout_sp.rows(); ++r) {
          out << "net " << pi << ' ' << m << " readout_sp " << r;
          for (int c = 0; c < net.readout_sp.cols(); ++c)
            out << ' ' << fmt(net.readout_sp(r, c));
          out << "\n";
        }
      } else {
        out << "net " << pi << ' ' << m << " readout";
        for (int r = 0; r < net.readout.size(); ++r)
          out << ' ' << fmt(net.readout[r]);
        out << "\n";
      }
    }
  out << "end\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  Reader rd(path);
  if (rd.one_i("kinetra_checkpoint") != 1)
    throw FormatError("checkpoint: unsupported version");

  AnsatzConfig cfg;
  cfg.components = components_from_name(rd.one_s("components"));
  cfg.base_ops.clear();
  for (const std::string& t : rd.expect("base_ops"))
    cfg.base_ops.push_back(op_from_name(t));
  cfg.K = rd.one_i("K");
  cfg.M = rd.one_i("M");
  cfg.mean_free_mask = rd.one_i("mean_free_mask") != 0;
  cfg.adv_order = rd.one_i("adv_order");
  cfg.readout_spatial = rd.one_i("readout_spatial") != 0;
  cfg.readout_shape.np = rd.one_i("readout_np");
  cfg.readout_shape.deg = rd.one_i("readout_deg");

  ScaleParams scale;
  {
    std::string m = rd.one_s("eps_mode");
    if (m == "global")
      scale.mode = EpsMode::Global;
    else if (m == "interval")
      scale.mode = EpsMode::Interval;
    else
      throw FormatError("checkpoint: unknown eps_mode '" + m + "'");
  }
  scale.interval = rd.one_i("eps_interval");
  scale.w_eps = rd.one_d("w_eps");

  SigmaSMode smode = sigma_s_mode_from_name(rd.one_s("sigma_s_mode"));
  double w_sigma_s = rd.one_d("w_sigma_s");
  SpatialShape sigma_shape;
  sigma_shape.np = rd.one_i("sigma_np");
  sigma_shape.deg = rd.one_i("sigma_deg");

  ModelParams mp = make_model(cfg, scale, smode, sigma_shape, 0);
  mp.phys.w_sigma_s = w_sigma_s;
  std::vector<double> vals;
  if (smode == SigmaSMode::TrainSpatial)
    for (int p = 0; p < sigma_shape.np; ++p) {
      auto toks = rd.expect("sigma_row");
      if (toks.empty() || parse_i(toks[0]) != p)
        throw FormatError("checkpoint: sigma_row out of order");
      parse_values({toks.begin() + 1, toks.end()}, sigma_shape.deg + 1,
                   "sigma_row", vals);
      for (int d = 0; d <= sigma_shape.deg; ++d)
        mp.phys.sigma_s_sp.a(p, d) = vals[d];
    }

  for (std::size_t pi = 0; pi < mp.nets.size(); ++pi)
    for (std::size_t m = 0; m < mp.nets[pi].size(); ++m) {
      LayerNet& net = mp.nets[pi][m];
      auto head = [&](const std::vector<std::string>& toks, const char* sect,
                      bool has_index) -> std::vector<std::string> {
        const std::size_t lead = has_index ? 4 : 3;
        if (toks.size() < lead || parse_i(toks[0]) != static_cast<int>(pi) ||
            parse_i(toks[1]) != static_cast<int>(m) || toks[2] != sect)
          throw FormatError("checkpoint: net line out of order (wanted " +
                            std::string(sect) + ")");
        return {toks.begin() + lead, toks.end()};
      };
      for (std::size_t k = 0; k < net.W.size(); ++k) {
        {
          auto toks = rd.expect("net");
          auto rest = head(toks, "W", true);
          if (parse_i(toks[3]) != static_cast<int>(k))
            throw FormatError("checkpoint: W layer index out of order");
          parse_values(rest, net.W[k].size(), "net W", vals);
          std::size_t at = 0;
          for (int r = 0; r < net.W[k].rows(); ++r)
            for (int c = 0; c < net.W[k].cols(); ++c)
              net.W[k](r, c) = vals[at++];
        }
        {
          auto toks = rd.expect("net");
          auto rest = head(toks, "B", true);
          if (parse_i(toks[3]) != static_cast<int>(k))
            throw FormatError("checkpoint: B layer index out of order");
          parse_values(rest, 2, "net B", vals);
          net.B[k](0) = vals[0];
          net.B[k](1) = vals[1];
        }
      }
      if (cfg.readout_spatial) {
        for (int r = 0; r < net.readout_sp.rows(); ++r) {
          auto toks = rd.expect("net");
          auto rest = head(toks, "readout_sp", true);
          if (parse_i(toks[3]) != r)
            throw FormatError("checkpoint: readout_sp row out of order");
          parse_values(rest, net.readout_sp.cols(), "readout_sp", vals);
          for (int c = 0; c < net.readout_sp.cols(); ++c)
            net.readout_sp(r, c) = vals[c];
        }
      } else {
        auto toks = rd.expect("net");
        auto rest = head(toks, "readout", false);
        parse_values(rest, net.readout.size(), "readout", vals);
        for (int r = 0; r < net.readout.size(); ++r) net.readout[r] = vals[r];
      }
    }
  rd.expect("end");
  rd.done();
  return mp;
}

}  // namespace kinetra
