"""Write a VGG16-shaped NNF1 model with random weights.

Useful for exercising ``cnnrf analyze --model`` without real trained weights.
"""
import argparse

from cnnrf.netforward import save_model, vgg16_shaped


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="destination .nnf1 file")
    ap.add_argument("--shape", default="32x32x3", help="input HxWxC")
    ap.add_argument("--width-scale", type=float, default=1 / 16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    shape = tuple(int(v) for v in args.shape.lower().split("x"))
    model = vgg16_shaped(shape, width_scale=args.width_scale, seed=args.seed)
    save_model(model, args.out)
    for layer in model.conv_layers():
        print(f"{layer.name}: {layer.out_channels} channels")


if __name__ == "__main__":
    main()
