#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mtl/checksum.hpp"
#include "mtl/data.hpp"
#include "mtl/params.hpp"

namespace mtl {

namespace {

using nlohmann::json;

constexpr const char* kCorpusFile = "corpus.jsonl";
constexpr const char* kFeatureFile = "features.bin";

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::string feature_key(std::uint64_t id) { return "u" + std::to_string(id); }

}  // namespace

void dump_corpus(const TaskSet& tasks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json header = {{"format", "mtl-corpus"},
                 {"version", 1},
                 {"vocab_size", tasks.vocab_size()},
                 {"features",
                  {{"dim", tasks.features().dim},
                   {"frames_per_token", tasks.features().frames_per_token},
                   {"noise_sd", tasks.features().noise_sd},
                   {"bank_seed", tasks.features().bank_seed}}}};
  json task_list = json::array();
  for (const Task& t : tasks.tasks()) {
    task_list.push_back({{"name", t.name}, {"role", role_name(t.role)}, {"corpus", corpus_name(t.corpus)}});
  }
  header["tasks"] = task_list;

  std::string body = header.dump() + "\n";
  Params features;
  std::size_t records = 0;
  for (const Task& t : tasks.tasks()) {
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      for (const Utterance& u : t.split(s)) {
        json tags = json::array();
        for (Lang l : u.lang_tags) tags.push_back(lang_name(l));
        json rec = {{"id", u.id}, {"task", t.name}, {"split", split_name(s)}, {"tokens", u.tokens}, {"tags", tags}};
        if (u.features.rank() == 2) {
          rec["features"] = std::string(kFeatureFile) + "#" + feature_key(u.id);
          features.add(feature_key(u.id), u.features);
        } else {
          rec["features"] = nullptr;
        }
        body += rec.dump() + "\n";
        ++records;
      }
    }
  }
  Fnv1a h;
  h.update(body);
  body += json{{"trailer", true}, {"records", records}, {"fnv1a", hex64(h.digest())}}.dump() + "\n";

  std::ofstream out(dir / kCorpusFile, std::ios::binary | std::ios::trunc);
  out << body;
  if (!out) throw Error("corpus: cannot write " + (dir / kCorpusFile).string());
  save_checkpoint(dir / kFeatureFile, features);
}

TaskSet load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / kCorpusFile, std::ios::binary);
  if (!in) throw CorruptionError("corpus: cannot open " + (dir / kCorpusFile).string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 2) throw CorruptionError("corpus: truncated file");

  json trailer;
  json header;
  try {
    trailer = json::parse(lines.back());
    header = json::parse(lines.front());
  } catch (const json::exception&) {
    throw CorruptionError("corpus: truncated or malformed file");
  }
  if (!trailer.is_object() || !trailer.value("trailer", false)) throw CorruptionError("corpus: missing trailer");
  Fnv1a h;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    h.update(lines[i]);
    h.update("\n");
  }
  if (trailer.value("fnv1a", std::string()) != hex64(h.digest())) throw CorruptionError("corpus: checksum mismatch");
  if (trailer.value("records", std::size_t{0}) != lines.size() - 2) throw CorruptionError("corpus: record count mismatch");

  try {
    if (header.at("format") != "mtl-corpus" || header.at("version") != 1) {
      throw CorruptionError("corpus: unsupported format");
    }
    FeatureSpec fs;
    const json& f = header.at("features");
    fs.dim = f.at("dim");
    fs.frames_per_token = f.at("frames_per_token");
    fs.noise_sd = f.at("noise_sd");
    fs.bank_seed = f.at("bank_seed");

    std::vector<Task> tasks;
    for (const json& t : header.at("tasks")) {
      Task task;
      task.name = t.at("name");
      task.role = parse_role(t.at("role").get<std::string>());
      task.corpus = parse_corpus(t.at("corpus").get<std::string>());
      tasks.push_back(std::move(task));
    }
    std::optional<Params> features;
    for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
      const json rec = json::parse(lines[i]);
      Utterance u;
      u.id = rec.at("id");
      u.tokens = rec.at("tokens").get<std::vector<int>>();
      for (const auto& tag : rec.at("tags")) u.lang_tags.push_back(parse_lang(tag.get<std::string>()));
      if (!rec.at("features").is_null()) {
        if (!features) features = load_checkpoint(dir / kFeatureFile);
        u.features = features->at(feature_key(u.id));
      }
      const std::string name = rec.at("task");
      auto it = std::find_if(tasks.begin(), tasks.end(), [&](const Task& t) { return t.name == name; });
      if (it == tasks.end()) throw CorruptionError("corpus: record for unknown task " + name);
      const std::string split = rec.at("split");
      if (split == "train") {
        it->train.push_back(std::move(u));
      } else if (split == "val") {
        it->val.push_back(std::move(u));
      } else if (split == "test") {
        it->test.push_back(std::move(u));
      } else {
        throw CorruptionError("corpus: unknown split " + split);
      }
    }
    return TaskSet(std::move(tasks), header.at("vocab_size").get<int>(), fs);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("corpus: malformed record: ") + e.what());
  } catch (const StructureError& e) {
    throw CorruptionError(std::string("corpus: feature blob does not match records: ") + e.what());
  }
}

}  // namespace mtl
