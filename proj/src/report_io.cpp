#include "rsr/report_io.hpp"

#include <charconv>
#include <cstdio>

namespace rsr::io {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error("csv: no column named '" + name + "'");
}

namespace {

std::string quote(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_row(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += quote(row[i]);
  }
  out += '\n';
}

// Splits one logical record starting at `pos`; advances past its newline.
std::vector<std::string> read_record(const std::string& text, std::size_t& pos) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"' && pos + 1 < text.size() && text[pos + 1] == '"') {
        cur += '"';
        ++pos;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n') {
      ++pos;
      break;
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw Error("csv: unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::string to_csv(const CsvTable& t) {
  std::string out;
  if (!t.schema.empty()) out += "# schema: " + t.schema + "\n";
  write_row(out, t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size())
      throw Error("csv: row has " + std::to_string(r.size()) + " fields, header has " +
                  std::to_string(t.header.size()));
    write_row(out, r);
  }
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::size_t pos = 0;
  const std::string prefix = "# schema: ";
  if (text.compare(0, prefix.size(), prefix) == 0) {
    const auto nl = text.find('\n');
    t.schema = text.substr(prefix.size(), nl == std::string::npos ? std::string::npos
                                                                  : nl - prefix.size());
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  if (pos >= text.size()) throw Error("csv: missing header");
  t.header = read_record(text, pos);
  std::size_t line = 2;
  while (pos < text.size()) {
    auto r = read_record(text, pos);
    ++line;
    if (r.size() == 1 && r[0].empty()) continue;
    if (r.size() != t.header.size())
      throw Error("csv: record " + std::to_string(line) + " has " + std::to_string(r.size()) +
                  " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json to_json(const attack::AttackSpec& s) {
  json j = {{"family", attack::to_string(s.family)},
            {"epsilon", s.epsilon},
            {"step_size", s.step_size},
            {"steps", s.num_steps},
            {"random_start", s.random_start},
            {"seed", s.seed}};
  if (s.family == attack::Family::zoo_fd) {
    j["fd_step"] = s.fd_step;
    j["coords_per_iter"] = s.coords_per_iter;
    j["query_budget"] = s.query_budget;
  }
  return j;
}

json to_json(const attack::EvaluationReport& r) {
  json attacks = json::array();
  for (const auto& a : r.attacks) {
    json o = {{"attack", to_json(a.spec)}, {"accuracy", a.accuracy}};
    if (a.spec.family == attack::Family::zoo_fd) {
      o["queries"] = a.queries;
      o["budget_exhausted"] = a.budget_exhausted;
    }
    attacks.push_back(o);
  }
  json j = {{"samples", r.samples},
            {"inference_noise", r.inference_noise},
            {"clean_accuracy", r.clean_accuracy},
            {"attacks", attacks}};
  if (!r.attacks.empty() && r.attacks.front().spec.family == attack::Family::transfer)
    j["source_accuracy"] = r.source_accuracy;
  return j;
}

json to_json(const prune::SparsityReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer)
    layers.push_back({{"layer", l.layer_id},
                      {"total", l.total_weights},
                      {"zeros", l.zero_weights},
                      {"sparsity_percent", l.sparsity_percent}});
  json j = {{"gamma", r.gamma},
            {"global_sparsity_percent", r.global_sparsity_percent},
            {"layers", layers}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("clean_acc_before", r.clean_acc_before);
  put("clean_acc_after", r.clean_acc_after);
  put("pgd_acc_before", r.pgd_acc_before);
  put("pgd_acc_after", r.pgd_acc_after);
  return j;
}

json to_json(const std::vector<train::EpochRecord>& history) {
  json arr = json::array();
  for (const auto& e : history) {
    json o = {{"epoch", e.epoch},
              {"mean_loss", e.mean_loss},
              {"clean_accuracy", e.clean_accuracy},
              {"lasso_magnitude", e.lasso_magnitude},
              {"frac_below_1e-5", e.frac_below_1e5},
              {"mean_abs_alpha", e.mean_abs_alpha}};
    o["pgd_accuracy"] = e.pgd_accuracy ? json(*e.pgd_accuracy) : json(nullptr);
    arr.push_back(o);
  }
  return arr;
}

CsvTable history_table(const std::vector<train::EpochRecord>& history) {
  CsvTable t;
  t.schema = "rsr-history/1";
  t.header = {"epoch",           "mean_loss",       "clean_accuracy", "pgd_accuracy",
              "lasso_magnitude", "frac_below_1e-5", "mean_abs_alpha"};
  for (const auto& e : history)
    t.rows.push_back({std::to_string(e.epoch), exact(e.mean_loss), fixed2(e.clean_accuracy),
                      e.pgd_accuracy ? fixed2(*e.pgd_accuracy) : "", exact(e.lasso_magnitude),
                      exact(e.frac_below_1e5), exact(e.mean_abs_alpha)});
  return t;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace rsr::io
