import torch
import torch.nn.functional as F

from segue.errors import ArgumentError


def linear_separability_probe(residuals: torch.Tensor, labels: torch.Tensor, num_classes=None,
                              steps: int = 200, lr: float = 0.1) -> float:
    """Training accuracy of softmax regression (zero init, full-batch GD) on flattened residuals."""
    if len(residuals) != len(labels):
        raise ArgumentError(f"{len(residuals)} residuals for {len(labels)} labels")
    if len(labels) == 0:
        return 0.0
    X = residuals.reshape(len(residuals), -1).double()
    y = labels.long()
    K = int(y.max()) + 1 if num_classes is None else num_classes
    W = torch.zeros(X.shape[1], K, dtype=torch.float64, requires_grad=True)
    b = torch.zeros(K, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.SGD([W, b], lr=lr)
    for _ in range(steps):
        loss = F.cross_entropy(X @ W + b, y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        return float(((X @ W + b).argmax(1) == y).double().mean())
