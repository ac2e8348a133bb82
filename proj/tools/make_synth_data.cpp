// Writes a deterministic image-classification dataset in gzipped IDX
// files with MNIST naming, for running the pipeline where the real thing
// is not available.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>

#include "vialign/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"generate a synthetic IDX image dataset"};
  std::string out_dir = "data";
  std::uint64_t seed = 7;
  int n_train = 12000;
  int n_test = 3000;
  double jitter = 0.75;
  double pixel_noise = 0.25;
  app.add_option("--out", out_dir, "output directory (default data)");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--n-train", n_train, "training pool size");
  app.add_option("--n-test", n_test, "test pool size");
  app.add_option("--jitter", jitter, "per-sample smooth field strength");
  app.add_option("--pixel-noise", pixel_noise, "iid pixel noise strength");
  CLI11_PARSE(app, argc, argv);
  if (n_train <= 0 || n_test <= 0) {
    std::cerr << "error: --n-train and --n-test must be positive\n";
    return 2;
  }

  try {
    vialign::SynthImageOptions opt;
    opt.sample_jitter = jitter;
    opt.pixel_noise = pixel_noise;
    std::filesystem::create_directories(out_dir);
    const auto put = [&](const std::string& name, const vialign::IdxTensor& t) {
      const auto path = (std::filesystem::path(out_dir) / name).string();
      vialign::write_file_bytes(path, vialign::gzip_compress(vialign::serialize_idx(t)));
      std::cout << path << " (" << t.dims[0] << " items)\n";
    };
    // One draw for both splits so they share the class prototypes; the
    // first n_train samples become the training pool.
    const auto [all_x, all_y] = vialign::synth_images(n_train + n_test, seed, opt);
    const auto slice = [](const vialign::IdxTensor& t, int from, int count) {
      vialign::IdxTensor out;
      out.dims = t.dims;
      out.dims[0] = static_cast<std::uint32_t>(count);
      std::size_t item = 1;
      for (std::size_t d = 1; d < t.dims.size(); ++d) item *= t.dims[d];
      out.data.assign(t.data.begin() + static_cast<std::ptrdiff_t>(from * item),
                      t.data.begin() + static_cast<std::ptrdiff_t>((from + count) * item));
      return out;
    };
    put("train-images-idx3-ubyte.gz", slice(all_x, 0, n_train));
    put("train-labels-idx1-ubyte.gz", slice(all_y, 0, n_train));
    put("t10k-images-idx3-ubyte.gz", slice(all_x, n_train, n_test));
    put("t10k-labels-idx1-ubyte.gz", slice(all_y, n_train, n_test));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
