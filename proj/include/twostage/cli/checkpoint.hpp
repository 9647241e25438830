// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "twostage/evalft/finetune.hpp"
#include "twostage/tensor/hash.hpp"
#include "twostage/tensor/serialize.hpp"
#include "twostage/train/plan_io.hpp"
#include "twostage/train/trainer.hpp"

namespace twostage::cli {

namespace fs = std::filesystem;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

/// Fine-tuning metadata stored next to the weights of a task model.
struct TaskInfo {
  evalft::TaskKind kind = evalft::TaskKind::Classification;
  model::HeadSpec head;
  std::vector<std::string> labels;

  friend bool operator==(const TaskInfo&, const TaskInfo&) = default;
};

template <typename T>
struct Checkpoint {
  train::ModelState<T> state;
  std::optional<TaskInfo> task;
  std::string dtype;  // as stored on disk
};

/// Canonical JSON text of a model config: sorted keys, compact.
inline std::string config_text(const model::ModelConfig& cfg) { return Json(train::model_to_json(cfg)).dump(); }

inline std::string config_hash(const model::ModelConfig& cfg) { return hex64(fnv1a(config_text(cfg))); }

namespace detail {

inline std::string tensor_file(const std::string& owner) { return "tensors/" + owner + ".bin"; }
inline std::string moment_file(const std::string& owner, const char* which) { return "optim/" + owner + "." + which + ".bin"; }

inline void check_name(const std::string& n) {
  if (n.empty() || n.find('/') != std::string::npos || n.find('\\') != std::string::npos || n == "." || n == "..") {
    throw Error("checkpoint: unsafe parameter name '" + n + "'");
  }
}

inline Json task_to_json(const TaskInfo& t) {
  Json j;
  j["kind"] = evalft::to_string(t.kind);
  j["labels"] = t.labels;
  if (t.kind != evalft::TaskKind::Generation) {
    j["head"] = {{"kind", model::to_string(t.head.kind)}, {"name", t.head.name}, {"hidden", t.head.hidden}, {"label_count", t.head.label_count}};
  }
  return j;
}

inline TaskInfo task_from_json(const JsonIn& in) {
  TaskInfo t;
  t.kind = evalft::task_kind_from_string(in.req<std::string>("kind"));
  for (const auto& l : in.array("labels")) t.labels.push_back(JsonIn::convert<std::string>(l, in.field_path("labels")));
  if (in.has("head")) {
    const auto h = in.child("head");
    t.head.kind = model::head_kind_from_string(h.req<std::string>("kind"));
    t.head.name = h.req<std::string>("name");
    t.head.hidden = h.req<std::vector<std::size_t>>("hidden");
    t.head.label_count = h.req<std::size_t>("label_count");
  }
  return t;
}

inline Json shape_json(const Shape& s) { return Json(s); }

}  // namespace detail

/// Writes manifest.json plus one raw file per tie group and per optimizer moment.
/// Everything is ordered by name, so equal states give equal bytes.
template <typename T>
void save_checkpoint(const fs::path& dir, const train::ModelState<T>& st, const std::optional<TaskInfo>& task = std::nullopt) {
  fs::create_directories(dir);
  fs::remove_all(dir / "tensors");
  fs::remove_all(dir / "optim");
  fs::create_directories(dir / "tensors");
  fs::create_directories(dir / "optim");

  Json params = Json::array();
  const auto& ps = st.params;
  for (const auto& members : ps.tie_groups()) {
    const std::string& owner = ps.owner(members.front());
    detail::check_name(owner);
    tensor::write_raw(dir / detail::tensor_file(owner), ps.get(owner));
    Json p;
    p["owner"] = owner;
    p["members"] = members;
    p["shape"] = detail::shape_json(ps.get(owner).shape());
    p["trainable"] = ps.trainable(owner);
    p["file"] = detail::tensor_file(owner);
    params.push_back(std::move(p));
  }

  Json moments = Json::array();
  for (const auto& [owner, m] : st.opt.moments) {
    detail::check_name(owner);
    tensor::write_raw(dir / detail::moment_file(owner, "m"), m.first);
    tensor::write_raw(dir / detail::moment_file(owner, "v"), m.second);
    moments.push_back({{"owner", owner}, {"updates", m.updates}, {"first", detail::moment_file(owner, "m")},
                       {"second", detail::moment_file(owner, "v")}});
  }

  Json j;
  j["format"] = "twostage-checkpoint";
  j["version"] = kCheckpointVersion;
  j["dtype"] = tensor::dtype_name<T>();
  j["config"] = Json(train::model_to_json(st.cfg));
  j["config_hash"] = config_hash(st.cfg);
  j["step"] = st.step;
  j["provenance"] = st.provenance;
  j["parameters"] = std::move(params);
  j["optimizer"] = {{"step", st.opt.step}, {"moments", std::move(moments)}};
  if (task) j["task"] = detail::task_to_json(*task);
  write_text_file((dir / kManifestName).string(), j.dump(2) + "\n");
}

/// Reads a checkpoint into precision T (values are converted when the stored dtype differs).
template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& dir) {
  const std::string mpath = (dir / kManifestName).string();
  if (!fs::exists(mpath)) throw ConfigError("'" + dir.string() + "' is not a checkpoint (no " + kManifestName + ")");
  const Json raw = load_json_file(mpath);
  const JsonIn in(raw, "");
  if (in.opt<std::string>("format", "") != "twostage-checkpoint") throw Error(mpath + ": not a checkpoint manifest");
  if (in.req<int>("version") != kCheckpointVersion) throw Error(mpath + ": unsupported checkpoint version");

  Checkpoint<T> ck;
  ck.dtype = in.req<std::string>("dtype");
  tensor::dtype_size(ck.dtype);
  auto& st = ck.state;
  st.cfg = train::model_from_json(in.child("config"));
  if (in.req<std::string>("config_hash") != config_hash(st.cfg)) throw Error(mpath + ": config hash does not match the stored config");
  st.step = in.req<std::uint64_t>("step");
  for (const auto& p : in.array("provenance")) st.provenance.push_back(JsonIn::convert<std::string>(p, "provenance"));

  for (const auto& pj : in.array("parameters")) {
    const JsonIn p(pj, "parameters");
    const auto owner = p.req<std::string>("owner");
    detail::check_name(owner);
    const auto shape = p.req<std::vector<std::size_t>>("shape");
    st.params.add(owner, tensor::read_raw<T>(dir / detail::tensor_file(owner), Shape(shape.begin(), shape.end()), ck.dtype),
                  p.req<bool>("trainable"));
    for (const auto& m : p.req<std::vector<std::string>>("members"))
      if (m != owner) st.params.tie(owner, m);
  }

  const JsonIn opt = in.child("optimizer");
  st.opt.step = opt.req<std::uint64_t>("step");
  for (const auto& mj : opt.array("moments")) {
    const JsonIn m(mj, "optimizer.moments");
    const auto owner = m.req<std::string>("owner");
    detail::check_name(owner);
    if (!st.params.contains(owner) || st.params.owner(owner) != owner) throw Error(mpath + ": moments for unknown group '" + owner + "'");
    const auto& shape = st.params.get(owner).shape();
    tensor::Moments<T> mom;
    mom.first = tensor::read_raw<T>(dir / detail::moment_file(owner, "m"), shape, ck.dtype);
    mom.second = tensor::read_raw<T>(dir / detail::moment_file(owner, "v"), shape, ck.dtype);
    mom.updates = m.req<std::uint64_t>("updates");
    st.opt.moments.emplace(owner, std::move(mom));
  }
  if (in.has("task")) ck.task = detail::task_from_json(in.child("task"));
  return ck;
}

/// Reads only the stored dtype, for dispatching on precision.
inline std::string checkpoint_dtype(const fs::path& dir) {
  const std::string mpath = (dir / kManifestName).string();
  if (!fs::exists(mpath)) throw ConfigError("'" + dir.string() + "' is not a checkpoint (no " + kManifestName + ")");
  return JsonIn(load_json_file(mpath), "").req<std::string>("dtype");
}

template <typename T>
TaskInfo task_info(const evalft::TaskModel<T>& m) {
  return {m.kind, m.head, m.label_names};
}

/// Rebuilds a task model; throws when the checkpoint carries no fine-tuned head.
template <typename T>
evalft::TaskModel<T> task_model(const Checkpoint<T>& ck) {
  if (!ck.task) throw Error("checkpoint has no fine-tuned task head; run finetune first");
  evalft::TaskModel<T> m;
  m.cfg = ck.state.cfg;
  m.params = ck.state.params;
  m.kind = ck.task->kind;
  m.head = ck.task->head;
  m.label_names = ck.task->labels;
  m.check_head();
  return m;
}

}  // namespace twostage::cli
