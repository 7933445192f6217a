// Regenerates the bundled MNIST-like fixture (IDX format, 200 images).
#include <filesystem>
#include <iostream>

#include "catgrad/data.hpp"

int main(int argc, char** argv) {
  std::string dir = argc > 1 ? argv[1] : "fixtures";
  std::filesystem::create_directories(dir);
  catgrad::RngStream rng(20161105);
  catgrad::ImageBatch batch = catgrad::make_fixture(200, rng);
  catgrad::save_idx(batch, dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  std::cout << "wrote " << batch.size() << " images to " << dir << "\n";
  return 0;
}
