#pragma once

#include "predict.hpp"

#include <json.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mvcopula {

using nlohmann::json;

inline constexpr int kArtifactSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "mvcopula 1.0.0";

// ---------------------------------------------------------------------------
// base64 over little-endian doubles

inline std::string base64_encode(const unsigned char* data, std::size_t len)
{
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    unsigned int v = data[i] << 16;
    if (i + 1 < len)
      v |= data[i + 1] << 8;
    if (i + 2 < len)
      v |= data[i + 2];
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? alphabet[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? alphabet[v & 63] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text)
{
  const auto value_of = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z')
      return ch - 'A';
    if (ch >= 'a' && ch <= 'z')
      return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9')
      return ch - '0' + 52;
    if (ch == '+')
      return 62;
    if (ch == '/')
      return 63;
    if (ch == '=')
      return -1;
    throw input_error("base64_decode: invalid character");
  };
  if (text.size() % 4 != 0)
    throw input_error("base64_decode: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      vals[k] = value_of(text[i + k]);
      if (vals[k] < 0) {
        vals[k] = 0;
        ++pad;
      }
    }
    const unsigned int v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back((v >> 16) & 0xff);
    if (pad < 2)
      out.push_back((v >> 8) & 0xff);
    if (pad < 1)
      out.push_back(v & 0xff);
  }
  return out;
}

inline std::string doubles_to_base64(const double* data, std::size_t count)
{
  static_assert(std::endian::native == std::endian::little,
                "artifact encoding assumes a little-endian host");
  return base64_encode(reinterpret_cast<const unsigned char*>(data),
                       count * sizeof(double));
}

inline std::vector<double> base64_to_doubles(const std::string& text)
{
  const auto bytes = base64_decode(text);
  if (bytes.size() % sizeof(double) != 0)
    throw input_error("base64_to_doubles: byte count not a multiple of 8");
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

// ---------------------------------------------------------------------------
// atomic file writes

inline void atomic_write_file(const std::string& path, const std::string& content)
{
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw input_error("atomic_write_file: cannot open " + tmp);
    out << content;
    if (!out)
      throw input_error("atomic_write_file: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw input_error("atomic_write_file: rename to " + path + " failed");
}

inline std::string read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw input_error("read_file: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd values;

  int column(const std::string& name) const
  {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name)
        return static_cast<int>(j);
    throw input_error("CsvTable: no column named '" + name + "'");
  }
};

inline CsvTable parse_csv(const std::string& text)
{
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw input_error("parse_csv: empty input");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();

  CsvTable table;
  {
    std::istringstream hs(line);
    std::string field;
    while (std::getline(hs, field, ','))
      table.header.push_back(field);
  }
  const std::size_t cols = table.header.size();
  if (cols == 0)
    throw input_error("parse_csv: header has no columns");

  std::vector<double> data;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string field;
    std::size_t col = 0;
    while (std::getline(ls, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0')
        throw input_error("parse_csv: row " + std::to_string(rows + 2) + ", column " +
                          std::to_string(col + 1) + ": cannot parse '" + field + "'");
      data.push_back(v);
      ++col;
    }
    if (col != cols)
      throw input_error("parse_csv: row " + std::to_string(rows + 2) + " has " +
                        std::to_string(col) + " fields, expected " + std::to_string(cols));
    ++rows;
  }
  if (rows == 0)
    throw input_error("parse_csv: no data rows");
  table.values.resize(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      table.values(i, j) = data[i * cols + j];
  return table;
}

inline CsvTable read_csv(const std::string& path)
{
  return parse_csv(read_file(path));
}

inline std::string to_csv(const std::vector<std::string>& header, const MatrixXd& values)
{
  std::ostringstream out;
  out.precision(17);
  for (std::size_t j = 0; j < header.size(); ++j)
    out << (j ? "," : "") << header[j];
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      out << (j ? "," : "") << values(i, j);
    out << '\n';
  }
  return out.str();
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const MatrixXd& values)
{
  atomic_write_file(path, to_csv(header, values));
}

// ---------------------------------------------------------------------------
// model artifact

namespace detail {

//! Array store: either inline base64 strings or a shared binary sidecar.
struct ArraySink {
  bool sidecar = false;
  std::string blob;  // concatenated little-endian doubles when sidecar

  json put(const double* data, std::size_t count)
  {
    if (!sidecar)
      return json{ { "encoding", "base64" },
                   { "data", doubles_to_base64(data, count) },
                   { "count", count } };
    const std::size_t offset = blob.size() / sizeof(double);
    blob.append(reinterpret_cast<const char*>(data), count * sizeof(double));
    return json{ { "encoding", "sidecar" }, { "offset", offset }, { "count", count } };
  }

  json put(const VectorXd& v) { return put(v.data(), static_cast<std::size_t>(v.size())); }
};

struct ArraySource {
  std::vector<double> blob;  // sidecar contents, possibly empty

  std::vector<double> get(const json& node) const
  {
    const std::string encoding = node.at("encoding").get<std::string>();
    const std::size_t count = node.at("count").get<std::size_t>();
    if (encoding == "base64") {
      auto out = base64_to_doubles(node.at("data").get<std::string>());
      if (out.size() != count)
        throw input_error("artifact: array count mismatch");
      return out;
    }
    if (encoding == "sidecar") {
      const std::size_t offset = node.at("offset").get<std::size_t>();
      if (offset + count > blob.size())
        throw input_error("artifact: sidecar range out of bounds");
      return { blob.begin() + offset, blob.begin() + offset + count };
    }
    throw input_error("artifact: unknown array encoding '" + encoding + "'");
  }

  VectorXd get_vector(const json& node) const
  {
    const auto data = get(node);
    return Eigen::Map<const VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
  }
};

inline json put_matrix(ArraySink& sink, const MatrixXd& m)
{
  json node = sink.put(m.data(), static_cast<std::size_t>(m.size()));
  node["rows"] = m.rows();
  node["cols"] = m.cols();
  return node;
}

inline MatrixXd get_matrix(const ArraySource& source, const json& node)
{
  const auto data = source.get(node);
  const Eigen::Index rows = node.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = node.at("cols").get<Eigen::Index>();
  if (rows * cols != static_cast<Eigen::Index>(data.size()))
    throw input_error("artifact: matrix shape mismatch");
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

inline std::string margin_kind_name(Margin::Kind kind)
{
  switch (kind) {
    case Margin::Kind::kde_grid:
      return "kde_grid";
    case Margin::Kind::normal:
      return "normal";
    case Margin::Kind::lognormal:
      return "lognormal";
    case Margin::Kind::exponential:
      return "exponential";
  }
  throw input_error("margin_kind_name: unknown kind");
}

inline Margin::Kind margin_kind_from_name(const std::string& name)
{
  if (name == "kde_grid")
    return Margin::Kind::kde_grid;
  if (name == "normal")
    return Margin::Kind::normal;
  if (name == "lognormal")
    return Margin::Kind::lognormal;
  if (name == "exponential")
    return Margin::Kind::exponential;
  throw input_error("artifact: unknown margin kind '" + name + "'");
}

}  // namespace detail

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

//! Serialize the fitted model to versioned JSON. When `binary_sidecar` is
//! set, the double arrays go to `path + ".bin"` and the JSON holds offsets;
//! the loader accepts either form.
inline void save_model(const FittedModel& model, const std::string& path,
                       const Provenance& provenance = {}, bool binary_sidecar = false)
{
  detail::ArraySink sink;
  sink.sidecar = binary_sidecar;

  json artifact;
  artifact["schema_version"] = kArtifactSchemaVersion;
  artifact["provenance"] = { { "seed", provenance.seed },
                             { "config_hash", provenance.config_hash },
                             { "library_version", kLibraryVersion } };
  artifact["layout"] = { { "n_responses", model.layout.n_responses },
                         { "n_basis", model.layout.n_basis },
                         { "prior", static_cast<int>(model.layout.prior) },
                         { "factors", model.layout.factors } };

  json basis;
  basis["knot_count"] = model.design.spec.knot_count;
  basis["poly_degree"] = model.design.spec.poly_degree;
  basis["radial_exponent"] = model.design.spec.radial_exponent;
  basis["seed"] = model.design.spec.seed;
  basis["std_mean"] = sink.put(model.design.std_mean);
  basis["std_sd"] = sink.put(model.design.std_sd);
  basis["knots"] = detail::put_matrix(sink, model.design.knots);
  basis["exponents"] = model.design.exponents;
  artifact["basis"] = std::move(basis);

  artifact["lambda"] = { { "mu", sink.put(model.lambda.mu) },
                         { "b", detail::put_matrix(sink, model.lambda.b) },
                         { "delta", sink.put(model.lambda.delta) } };
  artifact["eta_hat"] = sink.put(model.eta_hat);

  json margins = json::array();
  for (const auto& m : model.margins) {
    json node;
    node["kind"] = detail::margin_kind_name(m.kind);
    const double bounds[2] = { m.lower, m.upper };  // infinities survive base64
    node["bounds"] = sink.put(bounds, 2);
    node["par1"] = m.par1;
    node["par2"] = m.par2;
    if (m.kind == Margin::Kind::kde_grid) {
      node["grid"] = sink.put(m.grid);
      node["density"] = sink.put(m.density);
      node["cdf"] = sink.put(m.cdf_grid);
    }
    margins.push_back(std::move(node));
  }
  artifact["margins"] = std::move(margins);
  artifact["sidecar"] = binary_sidecar;

  if (binary_sidecar)
    atomic_write_file(path + ".bin", sink.blob);
  atomic_write_file(path, artifact.dump(2) + "\n");
}

inline FittedModel load_model(const std::string& path)
{
  json artifact;
  try {
    artifact = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw input_error(std::string("load_model: malformed artifact: ") + e.what());
  }
  if (artifact.at("schema_version").get<int>() != kArtifactSchemaVersion)
    throw input_error("load_model: unsupported schema version");

  detail::ArraySource source;
  if (artifact.value("sidecar", false)) {
    const std::string blob = read_file(path + ".bin");
    source.blob.resize(blob.size() / sizeof(double));
    std::memcpy(source.blob.data(), blob.data(), source.blob.size() * sizeof(double));
  }

  FittedModel model;
  const json& layout = artifact.at("layout");
  model.layout.n_responses = layout.at("n_responses").get<int>();
  model.layout.n_basis = layout.at("n_basis").get<int>();
  model.layout.prior = static_cast<PriorChoice>(layout.at("prior").get<int>());
  model.layout.factors = layout.at("factors").get<int>();

  const json& basis = artifact.at("basis");
  model.design.spec.knot_count = basis.at("knot_count").get<int>();
  model.design.spec.poly_degree = basis.at("poly_degree").get<int>();
  model.design.spec.radial_exponent = basis.at("radial_exponent").get<int>();
  model.design.spec.seed = basis.at("seed").get<std::uint64_t>();
  model.design.std_mean = source.get_vector(basis.at("std_mean"));
  model.design.std_sd = source.get_vector(basis.at("std_sd"));
  model.design.knots = detail::get_matrix(source, basis.at("knots"));
  model.design.exponents =
      basis.at("exponents").get<std::vector<std::vector<int>>>();

  const json& lambda = artifact.at("lambda");
  model.lambda.mu = source.get_vector(lambda.at("mu"));
  model.lambda.b = detail::get_matrix(source, lambda.at("b"));
  model.lambda.delta = source.get_vector(lambda.at("delta"));
  model.eta_hat = source.get_vector(artifact.at("eta_hat"));

  for (const json& node : artifact.at("margins")) {
    Margin m;
    m.kind = detail::margin_kind_from_name(node.at("kind").get<std::string>());
    const VectorXd bounds = source.get_vector(node.at("bounds"));
    m.lower = bounds(0);
    m.upper = bounds(1);
    m.par1 = node.at("par1").get<double>();
    m.par2 = node.at("par2").get<double>();
    if (m.kind == Margin::Kind::kde_grid) {
      m.grid = source.get_vector(node.at("grid"));
      m.density = source.get_vector(node.at("density"));
      m.cdf_grid = source.get_vector(node.at("cdf"));
    }
    model.margins.push_back(std::move(m));
  }

  if (model.eta_hat.size() != model.layout.total())
    throw input_error("load_model: parameter vector does not match the layout");
  if (static_cast<int>(model.margins.size()) != model.layout.n_responses)
    throw input_error("load_model: margin count does not match the layout");
  return model;
}

}  // namespace mvcopula
