#include "boxoffice/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "boxoffice/copycat.hpp"
#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

using nlohmann::json;

namespace {

// Howard Hinnant's days_from_civil.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void schema_fail(const std::string& field, const std::string& why) {
  throw SchemaError("field '" + field + "': " + why);
}

const json* find_field(const json& obj, const char* name) {
  const auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string string_field(const json& obj, const char* name, bool required,
                         std::string fallback = {}) {
  const json* v = find_field(obj, name);
  if (v == nullptr) {
    if (required) schema_fail(name, "missing mandatory field");
    return fallback;
  }
  if (!v->is_string()) schema_fail(name, "expected a string");
  return v->get<std::string>();
}

std::vector<std::string> string_list(const json& obj, const char* name) {
  std::vector<std::string> out;
  const json* v = find_field(obj, name);
  if (v == nullptr) return out;
  if (!v->is_array()) schema_fail(name, "expected an array of strings");
  for (const auto& item : *v) {
    if (!item.is_string()) schema_fail(name, "expected an array of strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

double number_field(const json& v, const char* name) {
  if (!v.is_number()) schema_fail(name, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) schema_fail(name, "not finite");
  return x;
}

void dedupe_in_order(std::vector<std::string>& items) {
  std::unordered_set<std::string> seen;
  std::vector<std::string> out;
  for (auto& s : items) {
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  items = std::move(out);
}

}  // namespace

std::int64_t Date::serial() const {
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

Date Date::plus_years(int years) const {
  Date d{year + years, month, day};
  d.day = std::min(d.day, days_in_month(d.year, d.month));
  return d;
}

std::optional<Date> Date::parse(std::string_view iso) {
  // Accepts YYYY-MM-DD with an optional time suffix.
  if (iso.size() < 10 || iso[4] != '-' || iso[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (!std::isdigit(static_cast<unsigned char>(iso[i]))) return std::nullopt;
  }
  y = std::stoi(std::string(iso.substr(0, 4)));
  m = std::stoi(std::string(iso.substr(5, 2)));
  d = std::stoi(std::string(iso.substr(8, 2)));
  if (m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) return std::nullopt;
  return Date{y, m, d};
}

double log10_revenue(double revenue_usd) { return std::log10(std::max(revenue_usd, 1.0)); }

MovieRecord movie_from_json(const json& obj) {
  if (!obj.is_object()) throw SchemaError("expected a JSON object per line");
  MovieRecord m;
  m.id = string_field(obj, "id", true);
  if (m.id.empty()) schema_fail("id", "must be non-empty");
  m.title = string_field(obj, "title", false);

  const json* revenue = find_field(obj, "revenue_usd");
  if (revenue == nullptr) schema_fail("revenue_usd", "missing mandatory field");
  m.revenue_usd = number_field(*revenue, "revenue_usd");
  if (m.revenue_usd < 0) schema_fail("revenue_usd", "must be >= 0");

  if (const json* budget = find_field(obj, "budget_usd")) {
    m.budget_usd = number_field(*budget, "budget_usd");
    if (*m.budget_usd < 0) schema_fail("budget_usd", "must be >= 0");
  }

  const std::string date = string_field(obj, "release_date", true);
  const auto parsed = Date::parse(date);
  if (!parsed) schema_fail("release_date", "not an ISO-8601 date: '" + date + "'");
  m.release_date = *parsed;
  m.release_year = m.release_date.year;
  m.release_month = m.release_date.month;
  if (const json* y = find_field(obj, "release_year")) {
    if (!y->is_number_integer()) schema_fail("release_year", "expected an integer");
    if (y->get<int>() != m.release_year) schema_fail("release_year", "disagrees with release_date");
  }
  if (const json* mo = find_field(obj, "release_month")) {
    if (!mo->is_number_integer()) schema_fail("release_month", "expected an integer");
    const int month = mo->get<int>();
    if (month < 1 || month > 12) schema_fail("release_month", "must be in 1..12, got " + std::to_string(month));
    if (month != m.release_month) schema_fail("release_month", "disagrees with release_date");
  }

  m.genres = string_list(obj, "genres");
  for (auto& g : m.genres) g = trim(g);
  std::erase_if(m.genres, [](const std::string& g) { return g.empty(); });
  dedupe_in_order(m.genres);

  m.mpaa = string_field(obj, "mpaa", false, "NA");
  if (std::find(kMpaaRatings.begin(), kMpaaRatings.end(), m.mpaa) == kMpaaRatings.end()) {
    schema_fail("mpaa", "unknown rating '" + m.mpaa + "'");
  }

  m.keywords = string_list(obj, "keywords");
  for (auto& k : m.keywords) k = lowercase(trim(k));
  std::erase_if(m.keywords, [](const std::string& k) { return k.empty(); });
  dedupe_in_order(m.keywords);

  if (const json* f = find_field(obj, "franchise")) {
    if (!f->is_boolean()) schema_fail("franchise", "expected a boolean");
    m.franchise = f->get<bool>();
  }
  if (find_field(obj, "franchise_name") != nullptr) {
    m.franchise_name = string_field(obj, "franchise_name", false);
  }
  m.producer = string_field(obj, "producer", false);
  m.distributor = string_field(obj, "distributor", false);

  m.directors = string_list(obj, "directors");
  m.writers = string_list(obj, "writers");
  if (m.directors.size() > kMaxDirectors) m.directors.resize(kMaxDirectors);
  if (m.writers.size() > kMaxWriters) m.writers.resize(kMaxWriters);

  if (const json* actors = find_field(obj, "actors")) {
    if (!actors->is_array()) schema_fail("actors", "expected an array");
    for (const auto& a : *actors) {
      if (m.actors.size() == kMaxActors) break;
      if (!a.is_object()) schema_fail("actors", "expected objects {name, gender, age}");
      Actor actor;
      actor.name = string_field(a, "name", true);
      actor.gender = string_field(a, "gender", false, "NA");
      if (const json* age = find_field(a, "age")) {
        if (!age->is_number()) schema_fail("actors.age", "expected a number");
        actor.age = static_cast<int>(std::lround(age->get<double>()));
        if (actor.age < 0) schema_fail("actors.age", "must be >= 0");
      }
      m.actors.push_back(std::move(actor));
    }
  }

  if (find_field(obj, "poster_ref") != nullptr) m.poster_ref = string_field(obj, "poster_ref", false);

  m.features.target_log_revenue = log10_revenue(m.revenue_usd);
  return m;
}

json movie_to_json(const MovieRecord& m) {
  json j;
  j["id"] = m.id;
  j["title"] = m.title;
  j["revenue_usd"] = m.revenue_usd;
  j["budget_usd"] = m.budget_usd ? json(*m.budget_usd) : json(nullptr);
  j["release_year"] = m.release_year;
  j["release_month"] = m.release_month;
  j["release_date"] = m.release_date.iso();
  j["genres"] = m.genres;
  j["mpaa"] = m.mpaa;
  j["keywords"] = m.keywords;
  j["franchise"] = m.franchise;
  j["franchise_name"] = m.franchise_name ? json(*m.franchise_name) : json(nullptr);
  j["producer"] = m.producer;
  j["distributor"] = m.distributor;
  j["directors"] = m.directors;
  j["writers"] = m.writers;
  json actors = json::array();
  for (const auto& a : m.actors) actors.push_back({{"name", a.name}, {"gender", a.gender}, {"age", a.age}});
  j["actors"] = std::move(actors);
  j["poster_ref"] = m.poster_ref ? json(*m.poster_ref) : json(nullptr);
  return j;
}

Corpus parse_dataset(std::string_view jsonl) {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    const std::size_t end = std::min(jsonl.find('\n', pos), jsonl.size());
    const std::string line = trim(jsonl.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty()) {
      if (end == jsonl.size()) break;
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    MovieRecord movie;
    try {
      movie = movie_from_json(obj);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto [it, inserted] = seen.emplace(movie.id, line_no);
    if (!inserted) {
      throw ConflictError("line " + std::to_string(line_no) + ": duplicate id '" + movie.id +
                          "' (first seen on line " + std::to_string(it->second) + ")");
    }
    corpus.push_back(std::move(movie));
    if (end == jsonl.size()) break;
  }
  return corpus;
}

Corpus load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str());
}

void save_dataset(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
  for (const auto& m : corpus) out << movie_to_json(m).dump() << '\n';
}

// ---------------------------------------------------------------------------

void engineer_star_power(Corpus& corpus) {
  struct History {
    int count = 0;
    double log_revenue_sum = 0.0;
  };
  std::unordered_map<std::string, History> crew;
  std::unordered_map<std::string, History> cast;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].release_date < corpus[b].release_date;
  });

  auto lookup = [](const std::unordered_map<std::string, History>& table, const std::string& name) {
    PersonPower p;
    if (const auto it = table.find(name); it != table.end() && it->second.count > 0) {
      p.experience = it->second.count;
      p.profitability = it->second.log_revenue_sum / it->second.count;
    }
    return p;
  };

  std::size_t begin = 0;
  while (begin < order.size()) {
    std::size_t end = begin;
    const Date day = corpus[order[begin]].release_date;
    while (end < order.size() && corpus[order[end]].release_date == day) ++end;

    // Same-day releases see only the state from strictly earlier days.
    for (std::size_t k = begin; k < end; ++k) {
      MovieRecord& m = corpus[order[k]];
      m.features.directors.clear();
      m.features.writers.clear();
      m.features.actors.clear();
      for (const auto& d : m.directors) m.features.directors.push_back(lookup(crew, d));
      for (const auto& w : m.writers) m.features.writers.push_back(lookup(crew, w));
      for (const auto& a : m.actors) m.features.actors.push_back(lookup(cast, a.name));
    }
    for (std::size_t k = begin; k < end; ++k) {
      const MovieRecord& m = corpus[order[k]];
      const double lr = log10_revenue(m.revenue_usd);
      std::set<std::string> crew_names(m.directors.begin(), m.directors.end());
      crew_names.insert(m.writers.begin(), m.writers.end());
      for (const auto& name : crew_names) {
        auto& h = crew[name];
        ++h.count;
        h.log_revenue_sum += lr;
      }
      std::set<std::string> cast_names;
      for (const auto& a : m.actors) cast_names.insert(a.name);
      for (const auto& name : cast_names) {
        auto& h = cast[name];
        ++h.count;
        h.log_revenue_sum += lr;
      }
    }
    begin = end;
  }
}

void engineer_competition(Corpus& corpus, std::span<const std::vector<int>> cluster_sets,
                          int window_days) {
  if (cluster_sets.size() != corpus.size()) {
    throw ShapeError("engineer_competition: cluster_sets size " + std::to_string(cluster_sets.size()) +
                     " != corpus size " + std::to_string(corpus.size()));
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].release_date < corpus[b].release_date;
  });
  std::vector<std::int64_t> serial(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) serial[i] = corpus[i].release_date.serial();

  auto shares_genre = [&](const MovieRecord& a, const MovieRecord& b) {
    for (const auto& g : a.genres) {
      if (std::find(b.genres.begin(), b.genres.end(), g) != b.genres.end()) return true;
    }
    return false;
  };

  std::size_t lo = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    while (serial[order[lo]] < serial[i] - window_days) ++lo;
    int count = 0;
    double similarity = 0.0;
    for (std::size_t q = lo; q < order.size() && serial[order[q]] <= serial[i] + window_days; ++q) {
      const std::size_t j = order[q];
      if (j == i || !shares_genre(corpus[i], corpus[j])) continue;
      ++count;
      similarity += jaccard(cluster_sets[i], cluster_sets[j]);
    }
    corpus[i].features.n_competitors = count;
    corpus[i].features.competitor_similarity = similarity;
  }
}

std::vector<std::string> impute_budgets(Corpus& corpus, std::span<const std::size_t> train_rows) {
  std::vector<std::string> warnings;
  std::map<std::string, std::pair<double, int>> by_genre;
  double total = 0.0;
  int count = 0;
  for (std::size_t row : train_rows) {
    const MovieRecord& m = corpus.at(row);
    if (!m.budget_usd) continue;
    total += *m.budget_usd;
    ++count;
    if (!m.genres.empty()) {
      auto& acc = by_genre[m.genres.front()];
      acc.first += *m.budget_usd;
      ++acc.second;
    }
  }
  const double overall = count > 0 ? total / count : 0.0;
  if (count == 0) warnings.push_back("no train budgets available; missing budgets imputed as 0");

  for (auto& m : corpus) {
    auto& f = m.features;
    if (m.budget_usd) {
      f.budget_usd = *m.budget_usd;
      f.budget_imputed = false;
    } else {
      f.budget_imputed = true;
      const auto it = m.genres.empty() ? by_genre.end() : by_genre.find(m.genres.front());
      if (it != by_genre.end()) {
        f.budget_usd = it->second.first / it->second.second;
      } else {
        f.budget_usd = overall;
        warnings.push_back("movie '" + m.id + "': no train budget for its primary genre, used overall mean");
      }
    }
    f.budget_log10 = std::log10(std::max(f.budget_usd, 1.0));
  }
  return warnings;
}

// ---------------------------------------------------------------------------

std::size_t FeatureTable::column_index(std::string_view name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw SchemaError("unknown feature column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

double ColumnScaler::apply(double raw) const {
  if (scaling == Scaling::log10) return std::log10(std::max(raw, 1.0));
  if (degenerate) return 0.0;
  return (raw - min) / (max - min);
}

Normalizer Normalizer::fit(const FeatureTable& table, const NormalizationPolicy& policy,
                           std::span<const std::size_t> train_rows, std::vector<std::string>* warnings) {
  Normalizer n;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    ColumnScaler s;
    s.name = table.columns[c];
    const auto it = policy.find(s.name);
    if (it == policy.end()) throw SchemaError("normalization policy has no entry for '" + s.name + "'");
    s.scaling = it->second;
    if (s.scaling == Scaling::minmax) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t row : train_rows) {
        const double v = table.rows.at(row).at(c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (train_rows.empty() || !(hi > lo)) {
        s.degenerate = true;
        s.min = train_rows.empty() ? 0.0 : lo;
        s.max = s.min;
        const std::string msg = "feature '" + s.name + "' has a degenerate train range; normalized to 0";
        spdlog::warn("{}", msg);
        if (warnings) warnings->push_back(msg);
      } else {
        s.min = lo;
        s.max = hi;
      }
    }
    n.scalers.push_back(std::move(s));
  }
  return n;
}

FeatureTable Normalizer::transform(const FeatureTable& table) const {
  if (table.columns.size() != scalers.size()) throw ShapeError("normalizer column count mismatch");
  FeatureTable out;
  out.columns = table.columns;
  out.rows.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<double> r(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      r[c] = scalers[c].apply(row[c]);
      if (!std::isfinite(r[c])) throw DataError("non-finite normalized value in '" + scalers[c].name + "'");
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

json Normalizer::to_json() const {
  json arr = json::array();
  for (const auto& s : scalers) {
    arr.push_back({{"name", s.name},
                   {"scaling", s.scaling == Scaling::log10 ? "log10" : "minmax"},
                   {"min", s.min},
                   {"max", s.max},
                   {"degenerate", s.degenerate}});
  }
  return arr;
}

Normalizer Normalizer::from_json(const json& j) {
  Normalizer n;
  for (const auto& item : j) {
    ColumnScaler s;
    s.name = item.at("name").get<std::string>();
    s.scaling = parse_scaling(item.at("scaling").get<std::string>());
    s.min = item.at("min").get<double>();
    s.max = item.at("max").get<double>();
    s.degenerate = item.at("degenerate").get<bool>();
    n.scalers.push_back(std::move(s));
  }
  return n;
}

NormalizedTable normalize_numericals(const FeatureTable& raw, const NormalizationPolicy& policy,
                                     std::span<const std::size_t> train_rows) {
  NormalizedTable out;
  out.normalizer = Normalizer::fit(raw, policy, train_rows, &out.warnings);
  out.table = out.normalizer.transform(raw);
  return out;
}

Scaling parse_scaling(std::string_view name) {
  if (name == "log10") return Scaling::log10;
  if (name == "minmax" || name == "min-max") return Scaling::minmax;
  throw ConfigError("unknown scaling '" + std::string(name) + "' (expected log10 or minmax)");
}

NormalizationPolicy policy_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("normalization policy must be a JSON object");
  NormalizationPolicy policy;
  for (const auto& [name, value] : j.items()) {
    if (!value.is_string()) throw ConfigError("policy entry '" + name + "' must be a string");
    policy[name] = parse_scaling(value.get<std::string>());
  }
  return policy;
}

NormalizationPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open policy '" + path.string() + "'");
  try {
    return policy_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

json SplitSet::to_json() const { return {{"train", train}, {"val", val}, {"test", test}}; }

SplitSet SplitSet::from_json(const json& j) {
  SplitSet s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

SplitSet stratified_split(const Corpus& corpus, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 10) {
    throw DataError("stratified_split needs at least 10 records, got " + std::to_string(n));
  }
  std::array<std::vector<std::string>, 2> strata;
  for (const auto& m : corpus) strata[m.franchise ? 1 : 0].push_back(m.id);

  Rng rng = substream(seed, "split");
  for (auto& s : strata) {
    std::sort(s.begin(), s.end());
    shuffle(s, rng);
  }

  // Largest-remainder allocation of the global test/val targets across strata.
  auto allocate = [&](double ratio) {
    const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    std::array<std::size_t, 2> quota{};
    std::array<double, 2> remainder{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 2; ++s) {
      const double exact = ratio * static_cast<double>(strata[s].size());
      quota[s] = static_cast<std::size_t>(std::floor(exact));
      remainder[s] = exact - static_cast<double>(quota[s]);
      assigned += quota[s];
    }
    while (assigned < target) {
      const std::size_t s = remainder[1] > remainder[0] ? 1 : 0;
      ++quota[s];
      remainder[s] = -1.0;
      ++assigned;
    }
    return quota;
  };
  const auto test_quota = allocate(kTestRatio);
  const auto val_quota = allocate(kValRatio);

  SplitSet split;
  for (std::size_t s = 0; s < 2; ++s) {
    const auto& ids = strata[s];
    const std::size_t n_test = std::min(test_quota[s], ids.size());
    const std::size_t n_val = std::min(val_quota[s], ids.size() - n_test);
    split.test.insert(split.test.end(), ids.begin(), ids.begin() + n_test);
    split.val.insert(split.val.end(), ids.begin() + n_test, ids.begin() + n_test + n_val);
    split.train.insert(split.train.end(), ids.begin() + n_test + n_val, ids.end());
  }
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

SplitRows split_rows(const Corpus& corpus, const SplitSet& split) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index.emplace(corpus[i].id, i);
  auto map_ids = [&](const std::vector<std::string>& ids) {
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw DataError("split references unknown id '" + id + "'");
      rows.push_back(it->second);
    }
    return rows;
  };
  return {map_ids(split.train), map_ids(split.val), map_ids(split.test)};
}

}  // namespace boxoffice
