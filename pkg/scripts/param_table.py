"""Parameter counts of the full-size configurations next to the reference totals."""
from caaed.model import ModelConfig, count_parameters, parameter_reduction_rate

REFERENCE = {  # (units, encoder layers): (AED, CA-AED) in millions
    (29190, 4): (44.9, 32.7), (29190, 6): (52.2, 39.0),
    (33755, 4): (49.5, 35.0), (33755, 6): (55.8, 41.3),
}


def main():
    print("units\tNe\tAED\tCA-AED\tsaved\tPRR%\treference")
    for (units, layers), (aed_pub, ca_pub) in REFERENCE.items():
        cfg = ModelConfig.full_size(units, layers)
        aed = count_parameters(cfg)["total"] / 1e6
        ca = count_parameters(cfg.replace(embedding="char"))["total"] / 1e6
        print(f"{units}\t{layers}\t{aed:.2f}\t{ca:.2f}\t{aed - ca:.2f}\t{parameter_reduction_rate(cfg):.1f}"
              f"\t{aed_pub}/{ca_pub}")


if __name__ == "__main__":
    main()
