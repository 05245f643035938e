import altair as alt


def field():
    stroke_color = '333'
    title_size = 18
    label_size = 12

    return {
        'config': {
            'view': {
                'continuousHeight': 300,
                'continuousWidth': 300,
                'strokeWidth': 0,
                'background': 'white',
            },
            'title': {
                'fontSize': title_size,
            },
            'axis': {
                'titleFontSize': title_size,
                'labelFontSize': label_size,
                'labelOverlap': 'greedy',
                'grid': False,
                'domainColor': stroke_color,
                'tickColor': stroke_color,
            },
            'header': {
                'titleFontSize': title_size,
                'labelFontSize': label_size,
            },
            'legend': {
                'titleFontSize': label_size,
                'labelFontSize': label_size,
                'gradientLength': 200,
            },
            'rect': {
                'strokeWidth': 0,
            },
        }
    }


alt.themes.register('meanflow_field', field)
alt.themes.enable('meanflow_field')
