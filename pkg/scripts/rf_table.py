"""Print the receptive-field size of every conv layer of the VGG16-shaped stack."""
from cnnrf.netforward import receptive_field_sizes, vgg16_shaped

if __name__ == "__main__":
    model = vgg16_shaped((224, 224, 3), with_weights=False)
    for name, size in receptive_field_sizes(model):
        print(f"{name:<16} {size:>4}")
