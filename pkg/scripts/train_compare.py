"""Head comparison on the synthetic covariance task, optionally across data scales.

For each seed, trains the isqrt, plain and avg heads with the frozen defaults
and reports the epoch at which isqrt first matches plain's final training
loss.  ``--scales`` multiplies the raw features: plain-head features grow
with the square of the scale, isqrt-head features only linearly.
"""
import argparse
import dataclasses

from isqrt_cov import train_demo
from isqrt_cov.train_demo import TrainConfig, epochs_to_reach, task_for, train


def scaled_task(cfg, scale):
    task = task_for(cfg)
    return dataclasses.replace(task, factors=task.factors * scale, x_train=task.x_train * scale,
                               x_test=task.x_test * scale)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--scales", default="1")
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    print("scale,seed,head,final_train_loss,test_acc,epoch_reaching_plain_final")
    for scale in (float(s) for s in args.scales.split(",")):
        for seed in (int(s) for s in args.seeds.split(",")):
            logs = {}
            for head in train_demo.HEADS:
                cfg = TrainConfig(head=head, seed=seed, epochs=args.epochs)
                try:
                    logs[head] = train(scaled_task(cfg, scale), cfg)[0]
                except FloatingPointError as exc:
                    print(f"{scale:g},{seed},{head},diverged,,  # {exc}")
            target = logs["plain"][-1].train_loss if "plain" in logs else None
            for head, rows in logs.items():
                hit = epochs_to_reach(rows, target) if target is not None else None
                print(f"{scale:g},{seed},{head},{rows[-1].train_loss:.4e},{rows[-1].test_acc:.3f},{hit}")


if __name__ == "__main__":
    main()
