import torch

from utils.errors import DegenerateVector, DimensionMismatch, ValidationError


def high_dim_distance(x_i, x_j, convention="one_minus_cos"):
    '''
    Cosine distance between teacher embeddings, batched over the leading dimensions.
    one_minus_cos: 1 - cos(x_i, x_j) (default)
    one_plus_cos: 1 + cos(x_i, x_j)
    chord: sqrt(2 - 2 cos(x_i, x_j)), the Euclidean distance between the unit-normalized vectors
    Accepts tensors or array-likes; array-likes of a single pair return a float.
    '''
    as_float = not isinstance(x_i, torch.Tensor)
    x_i = torch.as_tensor(x_i, dtype=torch.float64)
    x_j = torch.as_tensor(x_j, dtype=torch.float64)
    if x_i.shape[-1] != x_j.shape[-1]:
        raise DimensionMismatch(f"Vectors of length {x_i.shape[-1]} and {x_j.shape[-1]} cannot be compared.")

    norm_i = torch.linalg.vector_norm(x_i, dim=-1)
    norm_j = torch.linalg.vector_norm(x_j, dim=-1)
    if bool((norm_i == 0).any()) or bool((norm_j == 0).any()):
        raise DegenerateVector("Cosine distance is undefined for a zero-norm vector.")
    cos = ((x_i * x_j).sum(-1) / (norm_i * norm_j)).clamp(-1.0, 1.0)

    if convention == "one_minus_cos":
        dist = 1.0 - cos
    elif convention == "one_plus_cos":
        dist = 1.0 + cos
    elif convention == "chord":
        dist = torch.sqrt(2.0 - 2.0 * cos)
    else:
        raise NotImplementedError(f"Distance convention: {convention} not implemented.")

    if as_float and dist.ndim == 0:
        return float(dist)
    return dist


def safe_euclidean(diff):
    # sqrt has an infinite derivative at 0; zero-length differences get a zero gradient instead
    sq = (diff ** 2).sum(-1)
    positive = sq > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def l2_penalty(net):
    return sum((p ** 2).sum() for p in net.parameters())


class MDSLoss:
    '''
    Metric MDS stress between high-dimensional cosine distances and projected Euclidean distances,
    plus L2 weight decay on the projector.

    Args:
        reg_lambda: float, weight of the L2 penalty on every network parameter
        convention: str, cosine distance convention, see `high_dim_distance`
        reduction: str, 'sum' over pairs or 'mean'

    Call: (net, x_i, x_j, d_high=None) -> scalar tensor
    '''
    def __init__(self, reg_lambda=3e-4, convention="one_minus_cos", reduction="sum"):
        assert reduction in ("sum", "mean")
        self.reg_lambda = reg_lambda
        self.convention = convention
        self.reduction = reduction

    def stress(self, net, x_i, x_j, d_high=None):
        if d_high is None:
            d_high = high_dim_distance(x_i, x_j, self.convention)
        # one forward over both ends of every pair
        y = net(torch.cat([x_i, x_j], dim=0), return_dict=False)[0]
        y_i, y_j = y.chunk(2, dim=0)
        residual = (d_high - safe_euclidean(y_i - y_j)) ** 2
        return residual.sum() if self.reduction == "sum" else residual.mean()

    def __call__(self, net, x_i, x_j, d_high=None, **kwargs):
        loss = self.stress(net, x_i, x_j, d_high)
        if self.reg_lambda > 0:
            loss = loss + self.reg_lambda * l2_penalty(net)
        return loss


def mds_loss(pairs, net, cfg):
    '''
    pairs: (x_i, x_j) tensors of shape (P, p) or a list of (x_i, x_j) vector pairs
    cfg: anything with `reg_lambda` and `distance`, normally a TrainConfig
    '''
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], torch.Tensor) and pairs[0].ndim == 2:
        x_i, x_j = pairs
    else:
        if len(pairs) == 0:
            raise ValidationError("mds_loss needs at least one pair.")
        x_i = torch.stack([torch.as_tensor(a, dtype=torch.float64) for a, _ in pairs])
        x_j = torch.stack([torch.as_tensor(b, dtype=torch.float64) for _, b in pairs])
    return MDSLoss(reg_lambda=cfg.reg_lambda, convention=cfg.distance)(net, x_i, x_j)


class StudentLoss:
    '''
    Heteroscedastic Gaussian negative log-likelihood of the student with a population term and
    variance regularizers, in the log-variance parameterization:

        L = L_s + lambda_ * L_g + gamma * L_rs + delta * L_rg
        L_s  = 1/2 sum_i sum_j [ l_ij + (y_ij - mu_ij)^2 exp(-l_ij) ]
        L_g  = 1/2 sum_i sum_j [ lg_j + (t_ij - mug_j)^2 exp(-lg_j) ],  t = y (teacher) or mu (student)
        L_rs = 1/(2N) sum_i sum_j exp(l_ij)
        L_rg = 1/2 sum_j exp(lg_j)

    Args:
        lambda_, gamma, delta: loss weights
        population_target: 'teacher' or 'student'
        reduction: 'sum' or 'mean' (divides the total by the batch size)

    Call: (mu, logvar, y, mu_g, l_g, return_terms=False)
    '''
    def __init__(self, lambda_=0.1, gamma=1e-3, delta=1e-3, population_target="teacher", reduction="sum"):
        assert reduction in ("sum", "mean")
        self.lambda_ = lambda_
        self.gamma = gamma
        self.delta = delta
        self.population_target = population_target
        self.reduction = reduction

    @classmethod
    def from_weights(cls, weights, reduction="sum"):
        return cls(weights.lambda_, weights.gamma, weights.delta, weights.population_target, reduction)

    def __call__(self, mu, logvar, y, mu_g, l_g, return_terms=False, **kwargs):
        if mu.shape != y.shape or logvar.shape != y.shape:
            raise DimensionMismatch(f"Student outputs {tuple(mu.shape)}/{tuple(logvar.shape)} do not match targets {tuple(y.shape)}.")
        if mu_g.shape[-1] != y.shape[-1] or l_g.shape[-1] != y.shape[-1]:
            raise DimensionMismatch(f"Population parameters of width {mu_g.shape[-1]} do not match targets of width {y.shape[-1]}.")
        n = y.shape[0]

        l_s = 0.5 * (logvar + (y - mu) ** 2 * torch.exp(-logvar)).sum()
        target = y if self.population_target == "teacher" else mu
        l_pop = 0.5 * (l_g.expand_as(target) + (target - mu_g) ** 2 * torch.exp(-l_g)).sum()
        r_s = 0.5 / n * torch.exp(logvar).sum()
        r_g = 0.5 * torch.exp(l_g).sum()

        total = l_s + self.lambda_ * l_pop + self.gamma * r_s + self.delta * r_g
        if self.reduction == "mean":
            total = total / n
        if return_terms:
            return total, {"l_s": l_s, "l_g": l_pop, "r_s": r_s, "r_g": r_g}
        return total


def student_loss(batch, net, mu_g, l_g, w):
    '''
    batch: (x, y) tensors of shape (N, p) and (N, m)
    Deterministic forward (dropout scaled by keep probability) followed by the full objective.
    '''
    x, y = batch
    out = net(x)
    return StudentLoss.from_weights(w)(out.mu, out.logvar, y, mu_g, l_g)
