/** Meters-to-pixels affine view: uniform scale, y axis flipped for canvas. */
export function fitView(points, widthPx, heightPx, padMeters = 4) {
    if (points.length === 0) {
        return { scale: 10, ox: -widthPx / 20, oy: -heightPx / 20, heightPx };
    }
    let minX = Infinity;
    let minY = Infinity;
    let maxX = -Infinity;
    let maxY = -Infinity;
    for (const [x, y] of points) {
        minX = Math.min(minX, x);
        minY = Math.min(minY, y);
        maxX = Math.max(maxX, x);
        maxY = Math.max(maxY, y);
    }
    minX -= padMeters;
    minY -= padMeters;
    maxX += padMeters;
    maxY += padMeters;
    const scale = Math.min(widthPx / (maxX - minX), heightPx / (maxY - minY));
    // center the content
    const ox = minX - (widthPx / scale - (maxX - minX)) / 2;
    const oy = minY - (heightPx / scale - (maxY - minY)) / 2;
    return { scale, ox, oy, heightPx };
}
export function worldToScreen(v, p) {
    return [(p[0] - v.ox) * v.scale, v.heightPx - (p[1] - v.oy) * v.scale];
}
export function screenToWorld(v, p) {
    return [p[0] / v.scale + v.ox, (v.heightPx - p[1]) / v.scale + v.oy];
}
