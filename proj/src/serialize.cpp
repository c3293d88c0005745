#include "paramflow/serialize.hpp"

#include "paramflow/random.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace paramflow {

namespace {

const char* kind_name(RomKind k) {
  switch (k) {
    case RomKind::ResNetZeroBoundary: return "resnet_zero_boundary";
    case RomKind::ResNetPeriodic: return "resnet_periodic";
    case RomKind::LinearBasis: return "linear_basis";
  }
  return "?";
}

RomKind kind_from(const std::string& s) {
  if (s == "resnet_zero_boundary") return RomKind::ResNetZeroBoundary;
  if (s == "resnet_periodic") return RomKind::ResNetPeriodic;
  if (s == "linear_basis") return RomKind::LinearBasis;
  throw Error(ErrorCode::ConfigError, "unknown rom kind '" + s + "'");
}

}  // namespace

Json to_json(const DenseVector& v) {
  Json arr = Json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) throw Error(ErrorCode::NonFinite, "serialize: non-finite value");
    arr.push_back(v(i));
  }
  return arr;
}

DenseVector vector_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ConfigError, "expected a numeric array");
  DenseVector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::ConfigError, "expected a numeric array");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

Json packed_upper_to_json(const DenseMatrix& G) {
  Json arr = Json::array();
  for (Index r = 0; r < G.rows(); ++r)
    for (Index c = r; c < G.cols(); ++c) {
      if (!std::isfinite(G(r, c))) throw Error(ErrorCode::NonFinite, "serialize: non-finite value");
      arr.push_back(G(r, c));
    }
  return arr;
}

DenseMatrix symmetric_from_packed(const Json& j, Index m) {
  if (!j.is_array() || static_cast<Index>(j.size()) != m * (m + 1) / 2)
    throw Error(ErrorCode::CacheMismatch, "packed matrix has the wrong length");
  DenseMatrix G(m, m);
  std::size_t k = 0;
  for (Index r = 0; r < m; ++r)
    for (Index c = r; c < m; ++c) {
      const double v = j[k++].get<double>();
      G(r, c) = v;
      G(c, r) = v;
    }
  return G;
}

Json to_json(const Box& box) { return Json{{"lo", to_json(box.lo)}, {"hi", to_json(box.hi)}}; }

Box box_from_json(const Json& j) {
  Box b{vector_from_json(j.at("lo")), vector_from_json(j.at("hi"))};
  b.validate();
  return b;
}

Json to_json(const RomArch& arch) {
  Json j;
  j["kind"] = kind_name(arch.kind);
  j["input_dim"] = arch.input_dim;
  j["domain"] = to_json(arch.domain);
  if (arch.kind == RomKind::LinearBasis) {
    Json basis = Json::array();
    for (const auto& bf : arch.basis)
      basis.push_back({{"kind", bf.kind == BasisFunction::Kind::Sine ? "sine" : "monomial"}, {"index", bf.index}});
    j["basis"] = basis;
  } else {
    j["width"] = arch.width;
    j["depth"] = arch.depth;
    j["activation"] = arch.activation == Activation::Tanh ? "tanh" : "relu";
  }
  return j;
}

RomArch rom_arch_from_json(const Json& j) {
  try {
    RomArch arch;
    arch.kind = kind_from(j.at("kind").get<std::string>());
    arch.input_dim = j.at("input_dim").get<int>();
    arch.domain = j.contains("domain") ? box_from_json(j.at("domain")) : Box::unit(arch.input_dim);
    if (arch.kind == RomKind::LinearBasis) {
      const Json& basis = j.at("basis");
      if (basis.is_object()) {
        // Shorthand: {"sine_modes": n} on a 1D domain.
        const int modes = basis.at("sine_modes").get<int>();
        if (arch.input_dim != 1) throw Error(ErrorCode::ConfigError, "sine_modes shorthand needs input_dim 1");
        arch = RomArch::sine_basis_1d(modes, arch.domain);
      } else {
        for (const auto& b : basis) {
          const std::string kind = b.at("kind").get<std::string>();
          if (kind != "sine" && kind != "monomial") throw Error(ErrorCode::ConfigError, "unknown basis kind " + kind);
          arch.basis.push_back({kind == "sine" ? BasisFunction::Kind::Sine : BasisFunction::Kind::Monomial,
                                b.at("index").get<std::vector<int>>()});
        }
      }
    } else {
      arch.width = j.at("width").get<int>();
      arch.depth = j.at("depth").get<int>();
      const std::string act = j.value("activation", "tanh");
      if (act != "tanh" && act != "relu") throw Error(ErrorCode::ConfigError, "unknown activation " + act);
      arch.activation = act == "tanh" ? Activation::Tanh : Activation::Relu;
    }
    arch.validate();
    return arch;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("rom arch: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::ConfigError, e.what());
    throw;
  }
}

Json to_json(const PdeOperator& op) {
  Json j;
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Transport>) {
          j["form"] = "transport";
          j["velocity"] = to_json(f.velocity);
        } else if constexpr (std::is_same_v<T, Heat>) {
          j["form"] = "heat";
        } else if constexpr (std::is_same_v<T, AllenCahn>) {
          j["form"] = "allen_cahn";
          j["epsilon"] = f.epsilon;
        } else {
          j["form"] = "semilinear";
          j["diffusion"] = to_json(f.diffusion);
          j["drift"] = to_json(f.drift);
          const char* kinds[] = {"none", "linear", "cubic"};
          j["f"] = {{"kind", kinds[static_cast<int>(f.f.kind)]}, {"coeff", f.f.coeff}};
        }
      },
      op.form);
  j["lipschitz_f"] = op.lipschitz_f;
  j["ellipticity"] = op.ellipticity;
  j["div_b_bound"] = op.div_b_bound;
  return j;
}

PdeOperator operator_from_json(const Json& j) {
  try {
    const std::string form = j.at("form").get<std::string>();
    PdeOperator op;
    if (form == "transport") {
      op = PdeOperator::transport(vector_from_json(j.at("velocity")));
    } else if (form == "heat") {
      op = PdeOperator::heat();
    } else if (form == "allen_cahn") {
      op = PdeOperator::allen_cahn(j.value("epsilon", 1e-4));
    } else if (form == "semilinear") {
      Nonlinearity f;
      if (j.contains("f")) {
        const std::string kind = j["f"].value("kind", "none");
        if (kind == "none") f.kind = Nonlinearity::Kind::None;
        else if (kind == "linear") f.kind = Nonlinearity::Kind::Linear;
        else if (kind == "cubic") f.kind = Nonlinearity::Kind::Cubic;
        else throw Error(ErrorCode::ConfigError, "unknown nonlinearity " + kind);
        f.coeff = j["f"].value("coeff", 0.0);
      }
      op = PdeOperator::semilinear(vector_from_json(j.at("diffusion")), vector_from_json(j.at("drift")), f);
    } else {
      throw Error(ErrorCode::ConfigError, "unknown operator form '" + form + "'");
    }
    if (j.contains("lipschitz_f")) op.lipschitz_f = j["lipschitz_f"].get<double>();
    if (j.contains("ellipticity")) op.ellipticity = j["ellipticity"].get<double>();
    if (j.contains("div_b_bound")) op.div_b_bound = j["div_b_bound"].get<double>();
    return op;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("operator: ") + e.what());
  }
}

std::string digest(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::string arch_hash(const RomArch& arch) { return digest(to_json(arch)); }

Json rom_checkpoint(const RomModel& model, std::uint64_t seed) {
  return Json{{"format_version", kFormatVersion},
              {"kind", "rom_checkpoint"},
              {"arch", to_json(model.arch())},
              {"arch_hash", arch_hash(model.arch())},
              {"seed", seed},
              {"theta", to_json(model.theta())}};
}

RomModel rom_from_checkpoint(const Json& j) {
  if (j.value("format_version", 0) != kFormatVersion)
    throw Error(ErrorCode::ChecksumMismatch, "rom checkpoint: unsupported format_version");
  RomArch arch = rom_arch_from_json(j.at("arch"));
  if (j.contains("arch_hash") && j["arch_hash"].get<std::string>() != arch_hash(arch))
    throw Error(ErrorCode::ChecksumMismatch, "rom checkpoint: arch_hash does not match arch");
  return RomModel(std::move(arch), vector_from_json(j.at("theta")));
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<Json> read_json_lines(const std::filesystem::path& path, std::uintmax_t* valid_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open " + path.string());
  std::vector<Json> out;
  std::uintmax_t good = 0;
  std::string line;
  while (true) {
    std::streampos start = in.tellg();
    if (!std::getline(in, line)) break;
    const bool terminated = !in.eof();
    if (!terminated) break;  // partial trailing line
    if (line.empty()) {
      good = static_cast<std::uintmax_t>(start) + 1;
      continue;
    }
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception&) {
      break;
    }
    good = static_cast<std::uintmax_t>(start) + line.size() + 1;
  }
  if (valid_bytes) *valid_bytes = good;
  return out;
}

}  // namespace paramflow
