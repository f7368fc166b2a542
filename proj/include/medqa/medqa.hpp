#pragma once

#include "medqa/gestalt.hpp"
#include "medqa/text.hpp"
#include "medqa/dataset.hpp"
#include "medqa/prompt.hpp"
#include "medqa/response.hpp"
#include "medqa/metrics.hpp"
#include "medqa/digest.hpp"
#include "medqa/inference.hpp"
#include "medqa/report.hpp"
#include "medqa/toml.hpp"
#include "medqa/convert.hpp"
#include "medqa/cli.hpp"
