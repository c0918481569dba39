"""Training the decoder on the synthetic aligned world.

The world plants per-class signature patches into noisy images, and its text
embeddings are defined as the frozen image encoder's response to those very
signatures, so image and text features are aligned by construction. Both
towers stay frozen; only the dual-modal decoder and the shared classifier
head learn. This script trains a small model, prints the loss curve, and
saves a checkpoint that the evaluation demo can reuse.
"""

from pathlib import Path

from adds.checkpoint import save_checkpoint
from adds.training import TrainConfig, train

OUT = Path(__file__).resolve().parent / "out"


def main():
    config = TrainConfig(
        classes=12,
        n_seen=9,
        image_side=64,
        base_size=32,
        embed_dim=16,
        depth=3,
        ffn_hidden=32,
        epochs=6,
        n_train=300,
        lr=5e-3,
        noise_std=0.3,
        seed=1,
    )
    print(f"{config.classes} classes ({config.n_seen} seen in training), "
          f"{config.n_train} images, {config.depth} decoder blocks")
    ckpt = train(config)
    print("\nepoch  mean loss")
    for epoch, loss in enumerate(ckpt.loss_history):
        bar = "#" * int(60 * loss / ckpt.loss_history[0])
        print(f"{epoch:>5}  {loss:.4f}  {bar}")

    OUT.mkdir(exist_ok=True)
    path = OUT / "demo_checkpoint.adds"
    save_checkpoint(ckpt, path)
    print(f"\nsaved {path}")
    print("next: python3 demos/04_open_vocabulary_eval.py")


if __name__ == "__main__":
    main()
