#include "darn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "darn/autodiff.hpp"
#include "darn/rng.hpp"
#include "nlohmann/json.hpp"

namespace darn {

namespace fs = std::filesystem;

Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCategory::Io, "cannot open image ", path.string());

  // Header tokens are whitespace separated; '#' comments run to end of line.
  auto token = [&]() -> std::string {
    std::string t;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
      } else if (!std::isspace(c)) {
        t.push_back(char(c));
        while ((c = in.get()) != EOF && !std::isspace(c) && c != '#') t.push_back(char(c));
        if (c == '#')
          while ((c = in.get()) != EOF && c != '\n') {
          }
        return t;
      }
    }
    fail(ErrorCategory::Io, path.string(), ": truncated header");
  };

  check(token() == "P6", ErrorCategory::Validation, path.string(), ": not a binary PPM");
  auto number = [&](const char* what) -> std::size_t {
    const std::string t = token();
    try {
      std::size_t used = 0;
      long long n = std::stoll(t, &used);
      check(used == t.size() && n > 0, ErrorCategory::Validation, path.string(), ": bad ", what);
      return std::size_t(n);
    } catch (const std::logic_error&) {
      fail(ErrorCategory::Validation, path.string(), ": bad ", what, " '", t, "'");
    }
  };
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  check(maxval == 255, ErrorCategory::Validation, path.string(), ": maxval must be 255, got ",
        maxval);
  // the single whitespace byte after maxval was already consumed by token()

  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  check(std::size_t(in.gcount()) == raw.size(), ErrorCategory::Io, path.string(),
        ": expected ", raw.size(), " pixel bytes");

  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t.v[(c * h + y) * w + x] = double(raw[(y * w + x) * 3 + c]) / 255.0;
  return t;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  check(image.ndim() == 3 && image.dim(0) == 3, ErrorCategory::Dimension,
        "PPM wants a [3,H,W] tensor, got ", image.shape_str());
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCategory::Io, "cannot write image ", path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.v[(c * h + y) * w + x], 0.0, 1.0);
        raw[(y * w + x) * 3 + c] = (unsigned char)std::lround(v * 255.0);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  check(out.good(), ErrorCategory::Io, "short write to ", path.string());
}

static void validate_dataset(const Dataset& ds) {
  ds.schema.validate();
  check(!ds.items.empty(), ErrorCategory::Validation, "dataset has no items");
  std::set<std::string> seen;
  const std::vector<std::size_t>* shape = nullptr;
  for (const TrainExample& ex : ds.items) {
    check(!ex.item_id.empty(), ErrorCategory::Validation, "dataset item with empty id");
    check(seen.insert(ex.item_id).second, ErrorCategory::Validation, "duplicate item id ",
          ex.item_id);
    check(ex.online.ndim() == 3 && ex.online.dim(0) == 3, ErrorCategory::Validation, "item ",
          ex.item_id, ": online image must be [3,H,W], got ", ex.online.shape_str());
    if (!shape) shape = &ex.online.shape;
    check(ex.online.shape == *shape, ErrorCategory::Validation, "item ", ex.item_id,
          ": image size ", ex.online.shape_str(), " differs from the rest");
    for (const Tensor& t : ex.offlines)
      check(t.shape == *shape, ErrorCategory::Validation, "item ", ex.item_id,
            ": offline image size ", t.shape_str(), " differs from the rest");
    check(!ex.offlines.empty(), ErrorCategory::Validation, "item ", ex.item_id,
          ": needs at least one offline view");
    check(ex.labels.size() == ds.schema.size(), ErrorCategory::Validation, "item ", ex.item_id,
          ": ", ex.labels.size(), " labels for ", ds.schema.size(), " categories");
    for (std::size_t c = 0; c < ex.labels.size(); ++c) {
      const int l = ex.labels[c];
      check(l == kMissingLabel || (l >= 0 && std::size_t(l) < ds.schema.categories[c].cardinality),
            ErrorCategory::LabelRange, "item ", ex.item_id, ": label ", l, " out of range for ",
            ds.schema.categories[c].name);
    }
  }
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  validate_dataset(ds);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  check(!ec, ErrorCategory::Io, "cannot create ", (dir / "images").string(), ": ", ec.message());

  // TNSR files are authoritative; PPM copies sit alongside for inspection.
  auto emit = [&](const std::string& stem, const Tensor& img) {
    save_tnsr(dir / (stem + ".tnsr"), img);
    write_ppm(dir / (stem + ".ppm"), img);
    return stem + ".tnsr";
  };
  nlohmann::json items = nlohmann::json::array();
  for (const TrainExample& ex : ds.items) {
    const std::string stem = "images/" + ex.item_id;
    nlohmann::json offs = nlohmann::json::array();
    for (std::size_t k = 0; k < ex.offlines.size(); ++k)
      offs.push_back(emit(stem + "_off" + std::to_string(k), ex.offlines[k]));
    items.push_back({{"id", ex.item_id},
                     {"labels", ex.labels},
                     {"online", emit(stem + "_online", ex.online)},
                     {"offline", offs}});
  }
  const Tensor& first = ds.items.front().online;
  nlohmann::json manifest{{"schema", ds.schema.to_json()},
                          {"image_size", {first.dim(0), first.dim(1), first.dim(2)}},
                          {"items", items}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  check(out.good(), ErrorCategory::Io, "cannot write ", (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  check(out.good(), ErrorCategory::Io, "short write to manifest.json");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path =
      fs::is_directory(dir) ? dir / "manifest.json" : dir;
  const fs::path root = manifest_path.parent_path();
  std::ifstream in(manifest_path, std::ios::binary);
  check(in.good(), ErrorCategory::Io, "cannot open ", manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Io, manifest_path.string(), ": ", e.what());
  }

  Dataset ds;
  std::vector<std::size_t> want;
  try {
    ds.schema = AttributeSchema::from_json(manifest.at("schema"));
    want = manifest.at("image_size").get<std::vector<std::size_t>>();
    for (const nlohmann::json& j : manifest.at("items")) {
      TrainExample ex;
      ex.item_id = j.at("id").get<std::string>();
      ex.labels = j.at("labels").get<std::vector<int>>();
      ex.online = load_tnsr(root / j.at("online").get<std::string>());
      for (const nlohmann::json& rel : j.at("offline"))
        ex.offlines.push_back(load_tnsr(root / rel.get<std::string>()));
      ds.items.push_back(std::move(ex));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Validation, manifest_path.string(), ": ", e.what());
  }
  for (const TrainExample& ex : ds.items) {
    check(ex.online.shape == want, ErrorCategory::Validation, "item ", ex.item_id, ": image is ",
          ex.online.shape_str(), ", manifest says otherwise");
  }
  validate_dataset(ds);
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
  check(train_fraction > 0.0 && train_fraction <= 1.0, ErrorCategory::Config,
        "train fraction must lie in (0,1], got ", train_fraction);
  const std::size_t n = ds.items.size();
  const std::size_t n_train = std::size_t(std::llround(train_fraction * double(n)));
  check(n_train >= 1, ErrorCategory::Config, "split of ", n, " items at ", train_fraction,
        " leaves an empty training side");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

  Dataset train{ds.schema, {}}, test{ds.schema, {}};
  for (std::size_t i = 0; i < n; ++i)
    (is_train[i] ? train : test).items.push_back(ds.items[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace darn
