#include "lap/train/config.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "lap/errors.hpp"

namespace lap::train {
namespace {

constexpr std::size_t kPyramidWidths = std::tuple_size_v<decltype(nn::NetConfig::widths)>;
constexpr std::size_t kHeadWidths = std::tuple_size_v<decltype(nn::NetConfig::head_widths)>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ContractError("config: bad value '" + value + "' for key " + key);
  return out;
}

template <std::size_t N>
std::array<int, N> parse_list(const std::string& key, const std::string& value) {
  std::array<int, N> out{};
  std::size_t i = 0, start = 0;
  while (true) {
    const std::size_t comma = value.find(',', start);
    if (i == N) throw ContractError("config: key " + key + " takes " + std::to_string(N) + " values");
    out[i++] = parse_number<int>(key, trim(value.substr(start, comma == std::string::npos ? comma : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (i != N) throw ContractError("config: key " + key + " takes " + std::to_string(N) + " values");
  return out;
}

template <std::size_t N>
std::string join(const std::array<int, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "image_size") net.image_size = parse_number<int>(key, value);
  else if (key == "code_size") net.code_size = parse_number<int>(key, value);
  else if (key == "widths") net.widths = parse_list<kPyramidWidths>(key, value);
  else if (key == "head_widths") net.head_widths = parse_list<kHeadWidths>(key, value);
  else if (key == "max_set_size") net.max_set_size = parse_number<int>(key, value);
  else if (key == "depth_border") net.depth_border = parse_number<int>(key, value);
  else if (key == "fov") fov = parse_number<double>(key, value);
  else if (key == "tau") tau = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "lambda_flip") lambda_flip = parse_number<double>(key, value);
  else if (key == "min_face_fraction") min_face_fraction = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "epochs_a") epochs_a = parse_number<int>(key, value);
  else if (key == "epochs_b") epochs_b = parse_number<int>(key, value);
  else if (key == "epochs_c") epochs_c = parse_number<int>(key, value);
  else if (key == "wild_start_a") wild_start_a = parse_number<int>(key, value);
  else if (key == "val_modulus") val_modulus = parse_number<int>(key, value);
  else if (key == "threads") threads = parse_number<int>(key, value);
  else throw ContractError("config: unknown key '" + key + "'");
}

void TrainConfig::validate() const {
  net.validate();
  if (!(fov > 1.0 && fov < 60.0)) throw ContractError("config: fov must lie in (1, 60)");
  if (!(tau > 0.0)) throw ContractError("config: tau must be positive");
  if (batch_size < 1) throw ContractError("config: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ContractError("config: learning_rate must be positive");
  if (lambda_flip < 0.0) throw ContractError("config: lambda_flip must be non-negative");
  if (min_face_fraction < 0.0 || min_face_fraction > 1.0) throw ContractError("config: min_face_fraction must lie in [0,1]");
  if (epochs_a < 0 || epochs_b < 0 || epochs_c < 0) throw ContractError("config: epoch counts must be non-negative");
  if (val_modulus < 2) throw ContractError("config: val_modulus must be at least 2");
  if (threads < 0) throw ContractError("config: threads must be non-negative");
}

std::string TrainConfig::dump() const {
  std::ostringstream o;
  o.precision(17);
  o << "image_size = " << net.image_size << '\n'
    << "code_size = " << net.code_size << '\n'
    << "widths = " << join(net.widths) << '\n'
    << "head_widths = " << join(net.head_widths) << '\n'
    << "max_set_size = " << net.max_set_size << '\n'
    << "depth_border = " << net.depth_border << '\n'
    << "fov = " << fov << '\n'
    << "tau = " << tau << '\n'
    << "batch_size = " << batch_size << '\n'
    << "learning_rate = " << learning_rate << '\n'
    << "lambda_flip = " << lambda_flip << '\n'
    << "min_face_fraction = " << min_face_fraction << '\n'
    << "seed = " << seed << '\n'
    << "epochs_a = " << epochs_a << '\n'
    << "epochs_b = " << epochs_b << '\n'
    << "epochs_c = " << epochs_c << '\n'
    << "wild_start_a = " << wild_start_a << '\n'
    << "val_modulus = " << val_modulus << '\n';
  return o.str();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(dump())));
  return buf;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LAP_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace lap::train
