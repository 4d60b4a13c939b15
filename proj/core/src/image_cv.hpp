#pragma once

#include <opencv2/core.hpp>

#include "promptseg/image.hpp"

namespace promptseg::detail {

cv::Mat to_mat(const Image& image);
Image from_mat(const cv::Mat& mat);
cv::Mat to_mat(const Mask& mask);
Mask from_mat_mask(const cv::Mat& mat);

}  // namespace promptseg::detail
