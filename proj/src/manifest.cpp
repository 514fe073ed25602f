#include "editbench/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "editbench/search.hpp"

namespace editbench {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw UsageError("manifest: bad number for " + key + ": '" + v + "'");
  }
}

int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return n;
  } catch (const std::exception&) {
    throw UsageError("manifest: bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return n;
  } catch (const std::exception&) {
    throw UsageError("manifest: bad integer for " + key + ": '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

RunManifest RunManifest::parse(const std::string& text) {
  RunManifest m;
  m.coarse_lrs = SearchConfig{}.coarse_lrs;

  std::string section;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw UsageError("manifest line " + std::to_string(line_no) +
                         ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("manifest line " + std::to_string(line_no) +
                       ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section + "." + key;

    if (qual == "run.seed") m.seed = parse_u64(value, qual);
    else if (qual == "run.threads") m.threads = static_cast<int>(parse_int(value, qual));
    else if (qual == "run.out_dir") m.out_dir = value;
    else if (qual == "data.classes") m.classes = static_cast<int>(parse_int(value, qual));
    else if (qual == "data.base_count") m.base_count = parse_int(value, qual);
    else if (qual == "data.age_count") m.age_count = parse_int(value, qual);
    else if (qual == "data.detector_count") m.detector_count = parse_int(value, qual);
    else if (qual == "data.durations") {
      m.durations.clear();
      for (const auto& s : split_list(value))
        m.durations.push_back(static_cast<int>(parse_int(s, qual)));
    } else if (qual == "data.confounded_durations") {
      m.confounded_durations.clear();
      for (const auto& s : split_list(value))
        m.confounded_durations.push_back(static_cast<int>(parse_int(s, qual)));
    } else if (qual == "detector.brightness_offset") {
      m.detector.brightness_offset = parse_double(value, qual);
    } else if (qual == "detector.contrast_gain") {
      m.detector.contrast_gain = parse_double(value, qual);
    } else if (qual == "detector.gamma") {
      m.detector.gamma = parse_double(value, qual);
    } else if (qual == "detector.noise_sigma") {
      m.detector.noise_sigma = parse_double(value, qual);
    } else if (qual == "detector.blur_radius") {
      m.detector.blur_radius = static_cast<int>(parse_int(value, qual));
    } else if (qual == "train.lr") {
      m.train_lr = parse_double(value, qual);
    } else if (qual == "train.steps") {
      m.train_steps = static_cast<int>(parse_int(value, qual));
    } else if (qual == "search.methods") {
      m.methods = split_list(value);
    } else if (qual == "search.coarse_lrs") {
      m.coarse_lrs.clear();
      for (const auto& s : split_list(value))
        m.coarse_lrs.push_back(parse_double(s, qual));
    } else if (qual == "search.fine_points") {
      m.fine_points = static_cast<int>(parse_int(value, qual));
    } else if (qual == "search.fine_span") {
      m.fine_span = parse_double(value, qual);
    } else if (qual == "search.seeds") {
      m.seeds = static_cast<int>(parse_int(value, qual));
    } else if (qual == "search.tau") {
      m.tau = parse_double(value, qual);
    } else if (qual == "search.steps") {
      m.steps = static_cast<int>(parse_int(value, qual));
    } else if (qual == "search.rank") {
      m.rank = static_cast<int>(parse_int(value, qual));
    } else {
      throw UsageError("manifest line " + std::to_string(line_no) +
                       ": unknown key '" + qual + "'");
    }
  }
  m.validate();
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

std::vector<EditMethod> RunManifest::edit_methods() const {
  std::vector<EditMethod> out;
  for (const auto& name : methods) out.push_back(edit_method_from_name(name));
  return out;
}

void RunManifest::validate() const {
  if (classes < 2) throw UsageError("manifest: need at least 2 classes");
  if (base_count < classes) throw UsageError("manifest: base_count too small");
  if (age_count < 2) throw UsageError("manifest: age_count too small");
  if (detector_count < 2) throw UsageError("manifest: detector_count too small");
  if (durations.empty()) throw UsageError("manifest: no aging durations");
  for (int d : durations)
    if (!is_supported_duration(d))
      throw UsageError("manifest: unsupported duration " + std::to_string(d));
  for (int d : confounded_durations)
    if (std::find(durations.begin(), durations.end(), d) == durations.end())
      throw UsageError("manifest: confounded duration " + std::to_string(d) +
                       " not in durations");
  if (methods.empty()) throw UsageError("manifest: no methods");
  for (const auto& name : methods) edit_method_from_name(name);  // validates
  detector.validate();
  if (train_lr <= 0.0) throw UsageError("manifest: train.lr must be > 0");
  if (train_steps < 0) throw UsageError("manifest: train.steps must be >= 0");

  SearchConfig probe;
  probe.coarse_lrs = coarse_lrs.empty() ? SearchConfig::default_coarse_grid() : coarse_lrs;
  probe.fine_points = fine_points;
  probe.fine_span = fine_span;
  probe.seeds = seeds;
  probe.tau_pp = tau;
  probe.steps = steps;
  probe.rank = rank;
  probe.validate();
}

std::string RunManifest::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "[run]\n"
     << "seed = " << seed << "\n"
     << "threads = " << threads << "\n"
     << "out_dir = " << out_dir << "\n\n";
  os << "[data]\n"
     << "classes = " << classes << "\n"
     << "base_count = " << base_count << "\n"
     << "age_count = " << age_count << "\n"
     << "detector_count = " << detector_count << "\n";
  os << "durations = ";
  for (size_t i = 0; i < durations.size(); ++i)
    os << (i ? "," : "") << durations[i];
  os << "\n";
  if (!confounded_durations.empty()) {
    os << "confounded_durations = ";
    for (size_t i = 0; i < confounded_durations.size(); ++i)
      os << (i ? "," : "") << confounded_durations[i];
    os << "\n";
  }
  os << "\n[detector]\n"
     << "brightness_offset = " << detector.brightness_offset << "\n"
     << "contrast_gain = " << detector.contrast_gain << "\n"
     << "gamma = " << detector.gamma << "\n"
     << "noise_sigma = " << detector.noise_sigma << "\n"
     << "blur_radius = " << detector.blur_radius << "\n";
  os << "\n[train]\n"
     << "lr = " << train_lr << "\n"
     << "steps = " << train_steps << "\n";
  os << "\n[search]\n";
  os << "methods = ";
  for (size_t i = 0; i < methods.size(); ++i) os << (i ? "," : "") << methods[i];
  os << "\n";
  os << "coarse_lrs = ";
  for (size_t i = 0; i < coarse_lrs.size(); ++i) os << (i ? "," : "") << coarse_lrs[i];
  os << "\n"
     << "fine_points = " << fine_points << "\n"
     << "fine_span = " << fine_span << "\n"
     << "seeds = " << seeds << "\n"
     << "tau = " << tau << "\n"
     << "steps = " << steps << "\n"
     << "rank = " << rank << "\n";
  return os.str();
}

}  // namespace editbench
