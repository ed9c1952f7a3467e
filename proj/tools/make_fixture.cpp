// Generates the bundled fixture corpus: small Java methods with Javadoc-style
// comments, grouped into projects. Holdout projects reuse the training
// vocabulary in unseen (schema, entity) combinations.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

std::string cap(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

struct Generated {
  std::string source;
  std::string doc;
};

const std::vector<std::string> kEntities = {
    "user",   "order",   "item",   "node",   "token",  "widget", "buffer",
    "record", "event",   "session", "account", "message", "task",  "file",
    "sensor", "channel", "packet", "route",  "metric", "worker",
};

const std::vector<std::string> kContainers = {
    "registry", "basket", "pool",  "cache", "queue",
    "list",     "store",  "group", "batch", "table",
};

Generated make_method(int schema, const std::string& e, const std::string& container) {
  std::string E = cap(e);
  Generated g;
  switch (schema) {
    case 0:
      g.source = "public int get" + E + "Count() {\n    return " + e + "Count;\n}";
      g.doc = "Returns the number of " + e + "s in this " + container + ".";
      break;
    case 1:
      g.source = "public void set" + E + "Name(String name) {\n    this." + e +
                 "Name = name;\n}";
      g.doc = "Sets the name of this " + e + ".";
      break;
    case 2:
      g.source = "public boolean is" + E + "QueueEmpty() {\n    return " + e +
                 "Queue.size() == 0;\n}";
      g.doc = "Checks if the " + e + " queue is empty.";
      break;
    case 3:
      g.source = "public void add" + E + "(" + E + " " + e + ") {\n    " + e +
                 "List.add(" + e + ");\n    " + e + "Count = " + e + "Count + 1;\n}";
      g.doc = "Adds a " + e + " to this " + container + ".";
      break;
    case 4:
      g.source = "public void remove" + E + "(" + E + " " + e + ") {\n    " + e +
                 "List.remove(" + e + ");\n}";
      g.doc = "Removes a " + e + " from this " + container + ".";
      break;
    case 5:
      g.source = "public int total" + E +
                 "Weight(int[] weights) {\n    int total = 0;\n    for (int i = 0; i < "
                 "weights.length; i = i + 1) {\n        total = total + weights[i];\n    "
                 "}\n    return total;\n}";
      g.doc = "Computes the total weight of all " + e + "s.";
      break;
    case 6:
      g.source = "public double max" + E +
                 "Score(double first, double second) {\n    if (first > second) {\n     "
                 "   return first;\n    }\n    return second;\n}";
      g.doc = "Returns the larger of two " + e + " scores.";
      break;
    case 7:
      g.source = "public boolean has" + E + "(String name) {\n    return " + e +
                 "Names.contains(name);\n}";
      g.doc = "Checks if a " + e + " with the given name exists.";
      break;
    case 8:
      g.source = "public void clear" + E + "s() {\n    " + e + "List.clear();\n    " + e +
                 "Count = 0;\n}";
      g.doc = "Removes all " + e + "s from this " + container + ".";
      break;
    case 9:
      g.source = "public " + E + " find" + E + "(String name) {\n    for (" + E + " " + e +
                 " : " + e + "List) {\n        if (" + e +
                 ".getName().equals(name)) {\n            return " + e +
                 ";\n        }\n    }\n    return null;\n}";
      g.doc = "Finds the " + e + " with the given name.";
      break;
    case 10:
      g.source = "public int countActive" + E + "s() {\n    int active = 0;\n    for (" +
                 E + " " + e + " : " + e + "List) {\n        if (" + e +
                 ".isActive()) {\n            active = active + 1;\n        }\n    }\n  "
                 "  return active;\n}";
      g.doc = "Counts the active " + e + "s in this " + container + ".";
      break;
    case 11:
      g.source = "public void resumeAll" + E + "s() {\n    Enumeration e = " + e +
                 "List.elements();\n    while (e.hasMoreElements()) {\n        ((" + E +
                 ") (e.nextElement())).resume();\n    }\n}";
      g.doc = "Resume all " + e + "s in this " + container + ".";
      break;
    case 12:
      g.source = "public String describe" + E + "() {\n    return \"" + e + " \" + " + e +
                 "Name;\n}";
      g.doc = "Returns a short description of this " + e + ".";
      break;
    case 13:
      g.source = "public void init" + E + "Buffer(int capacity) {\n    this." + e +
                 "Buffer = new int[capacity];\n    this." + e + "Count = 0;\n}";
      g.doc = "Initializes the " + e + " buffer with the given capacity.";
      break;
    default:
      g.source = "public void scale" + E + "Weight(double factor) {\n    " + e +
                 "Weight = " + e + "Weight * factor;\n}";
      g.doc = "Multiplies the " + e + " weight by the given factor.";
      break;
  }
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  const char* out_path = argc > 1 ? argv[1] : "fixture_raw.jsonl";
  constexpr int kSchemas = 15;
  constexpr int kTrainSamples = 200;
  constexpr int kHoldoutSamples = 50;
  constexpr int kPerProject = 5;

  std::vector<std::pair<int, int>> combos;  // (schema, entity)
  for (int s = 0; s < kSchemas; ++s) {
    for (int e = 0; e < static_cast<int>(kEntities.size()); ++e) combos.emplace_back(s, e);
  }
  std::mt19937_64 rng(20240817);
  std::shuffle(combos.begin(), combos.end(), rng);

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::fprintf(stderr, "cannot write %s\n", out_path);
    return 1;
  }
  for (int i = 0; i < kTrainSamples + kHoldoutSamples; ++i) {
    auto [schema, entity_idx] = combos[static_cast<std::size_t>(i)];
    const std::string& entity = kEntities[static_cast<std::size_t>(entity_idx)];
    const std::string& container =
        kContainers[static_cast<std::size_t>(entity_idx) % kContainers.size()];
    Generated g = make_method(schema, entity, container);
    bool holdout = i >= kTrainSamples;
    int project = holdout ? (i - kTrainSamples) / kPerProject : i / kPerProject;
    char project_id[32];
    std::snprintf(project_id, sizeof(project_id), holdout ? "holdout-%02d" : "corpus-%02d",
                  project);
    nlohmann::json record = {
        {"source_text", g.source},
        {"doc_text", g.doc},
        {"project_id", project_id},
    };
    out << record.dump() << '\n';
  }
  std::printf("wrote %d records to %s\n", kTrainSamples + kHoldoutSamples, out_path);
  return 0;
}
